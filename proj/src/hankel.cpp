#include "rdpc/hankel.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <Eigen/SVD>

#include "rdpc/errors.hpp"

namespace rdpc {

Dataset::Dataset(Eigen::Index n_u, Eigen::Index n_w, Eigen::Index n_y, Eigen::Index capacity) {
  if (n_u < 1 || n_y < 1 || n_w < 0) throw DimensionError("Dataset: bad channel dims");
  if (capacity < 1) throw DimensionError("Dataset: capacity must be positive");
  u_.setZero(n_u, capacity);
  w_.setZero(std::max<Eigen::Index>(n_w, 0), capacity);
  y_.setZero(n_y, capacity);
}

Eigen::Index Dataset::phys(Eigen::Index i) const {
  if (i < 0 || i >= size_) throw DimensionError("Dataset: index out of range");
  return (head_ + i) % capacity();
}

void Dataset::push(const Eigen::VectorXd& u, const Eigen::VectorXd& w, const Eigen::VectorXd& y) {
  if (u.size() != n_u() || w.size() != n_w() || y.size() != n_y())
    throw DimensionError("Dataset::push: sample dimension mismatch");
  Eigen::Index col;
  if (size_ < capacity()) {
    col = (head_ + size_) % capacity();
    ++size_;
  } else {
    col = head_;
    head_ = (head_ + 1) % capacity();
  }
  u_.col(col) = u;
  if (n_w() > 0) w_.col(col) = w;
  y_.col(col) = y;
}

Eigen::VectorXd Dataset::u_at(Eigen::Index i) const { return u_.col(phys(i)); }
Eigen::VectorXd Dataset::w_at(Eigen::Index i) const { return w_.col(phys(i)); }
Eigen::VectorXd Dataset::y_at(Eigen::Index i) const { return y_.col(phys(i)); }

namespace {
Eigen::MatrixXd ordered(const Eigen::MatrixXd& buf, Eigen::Index head, Eigen::Index size) {
  Eigen::MatrixXd out(buf.rows(), size);
  for (Eigen::Index i = 0; i < size; ++i) out.col(i) = buf.col((head + i) % buf.cols());
  return out;
}
}  // namespace

Eigen::MatrixXd Dataset::u_signal() const { return ordered(u_, head_, size_); }
Eigen::MatrixXd Dataset::w_signal() const { return ordered(w_, head_, size_); }
Eigen::MatrixXd Dataset::y_signal() const { return ordered(y_, head_, size_); }

void push_sample(Dataset& ds, const Eigen::VectorXd& u, const Eigen::VectorXd& w,
                 const Eigen::VectorXd& y) {
  ds.push(u, w, y);
}

Eigen::MatrixXd build_hankel(const Eigen::MatrixXd& signal, Eigen::Index depth) {
  if (depth < 1) throw DimensionError("build_hankel: depth must be positive");
  const Eigen::Index n_s = signal.rows();
  const Eigen::Index t = signal.cols();
  if (t < depth) throw DimensionError("build_hankel: signal shorter than depth");
  const Eigen::Index n_c = t - depth + 1;
  Eigen::MatrixXd h(depth * n_s, n_c);
  for (Eigen::Index i = 0; i < depth; ++i)
    h.middleRows(i * n_s, n_s) = signal.middleCols(i, n_c);
  return h;
}

Eigen::MatrixXd HankelStack::h() const {
  Eigen::MatrixXd out(h_rows(), n_c);
  Eigen::Index at = 0;
  for (const Eigen::MatrixXd* b : {&u_init, &w_init, &u_pred, &w_pred}) {
    out.middleRows(at, b->rows()) = *b;
    at += b->rows();
  }
  return out;
}

HankelStack build_stack(const Dataset& ds, Eigen::Index t_init, Eigen::Index n_h) {
  if (t_init < 1 || n_h < 1) throw DimensionError("build_stack: t_init and n_h must be positive");
  const Eigen::Index depth = t_init + n_h;
  if (ds.size() < depth) throw DimensionError("build_stack: not enough samples for depth");

  HankelStack s;
  s.t_init = t_init;
  s.n_h = n_h;
  s.n_u = ds.n_u();
  s.n_w = ds.n_w();
  s.n_y = ds.n_y();
  s.n_c = ds.size() - depth + 1;

  const Eigen::MatrixXd hu = build_hankel(ds.u_signal(), depth);
  const Eigen::MatrixXd hy = build_hankel(ds.y_signal(), depth);
  s.u_init = hu.topRows(t_init * s.n_u);
  s.u_pred = hu.bottomRows(n_h * s.n_u);
  s.y_init = hy.topRows(t_init * s.n_y);
  s.y_pred = hy.bottomRows(n_h * s.n_y);
  if (s.n_w > 0) {
    const Eigen::MatrixXd hw = build_hankel(ds.w_signal(), depth);
    s.w_init = hw.topRows(t_init * s.n_w);
    s.w_pred = hw.bottomRows(n_h * s.n_w);
  } else {
    s.w_init.resize(0, s.n_c);
    s.w_pred.resize(0, s.n_c);
  }
  return s;
}

Eigen::Index numerical_rank(const Eigen::MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] == 0.0) return 0;
  const double tol = sv[0] * static_cast<double>(std::max(m.rows(), m.cols())) * 1e-10;
  Eigen::Index r = 0;
  while (r < sv.size() && sv[r] > tol) ++r;
  return r;
}

bool is_persistently_exciting(const Eigen::MatrixXd& signal, Eigen::Index order) {
  if (order < 1) throw DimensionError("is_persistently_exciting: order must be positive");
  if (signal.cols() < order) return false;
  const Eigen::MatrixXd h = build_hankel(signal, order);
  return numerical_rank(h) == h.rows();
}

bool pe_heuristic(const Eigen::VectorXd& u_nominal, double tol) {
  if (tol < 0.0) throw ConfigError("pe_heuristic: tol must be nonnegative");
  if (u_nominal.size() == 0) return true;
  return u_nominal.lpNorm<Eigen::Infinity>() <= tol;
}

namespace {
void format_value(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}
}  // namespace

void write_dataset_csv(std::ostream& out, const Dataset& ds) {
  out << "t";
  for (Eigen::Index i = 1; i <= ds.n_u(); ++i) out << ",u_" << i;
  for (Eigen::Index i = 1; i <= ds.n_w(); ++i) out << ",w_" << i;
  for (Eigen::Index i = 1; i <= ds.n_y(); ++i) out << ",y_" << i;
  out << "\n";
  for (Eigen::Index t = 0; t < ds.size(); ++t) {
    out << t;
    const Eigen::VectorXd u = ds.u_at(t), w = ds.w_at(t), y = ds.y_at(t);
    for (Eigen::Index i = 0; i < u.size(); ++i) { out << ","; format_value(out, u[i]); }
    for (Eigen::Index i = 0; i < w.size(); ++i) { out << ","; format_value(out, w[i]); }
    for (Eigen::Index i = 0; i < y.size(); ++i) { out << ","; format_value(out, y[i]); }
    out << "\n";
  }
}

void write_dataset_csv(const std::string& path, const Dataset& ds) {
  std::ofstream f(path);
  if (!f) throw ConfigError("write_dataset_csv: cannot open " + path);
  write_dataset_csv(f, ds);
}

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("read_dataset_csv: empty input");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.empty() || header[0] != "t")
    throw ConfigError("read_dataset_csv: header must start with column t");
  Eigen::Index n_u = 0, n_w = 0, n_y = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const std::string& h = header[i];
    if (h.rfind("u_", 0) == 0) ++n_u;
    else if (h.rfind("w_", 0) == 0) ++n_w;
    else if (h.rfind("y_", 0) == 0) ++n_y;
    else throw ConfigError("read_dataset_csv: unknown column " + h);
  }
  if (n_u < 1 || n_y < 1) throw ConfigError("read_dataset_csv: need u and y columns");

  std::vector<Eigen::VectorXd> us, ws, ys;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (static_cast<Eigen::Index>(cells.size()) != 1 + n_u + n_w + n_y)
      throw ConfigError("read_dataset_csv: wrong cell count in row " + line);
    Eigen::VectorXd u(n_u), w(n_w), y(n_y);
    Eigen::Index at = 1;
    for (Eigen::Index i = 0; i < n_u; ++i) u[i] = std::stod(cells[at++]);
    for (Eigen::Index i = 0; i < n_w; ++i) w[i] = std::stod(cells[at++]);
    for (Eigen::Index i = 0; i < n_y; ++i) y[i] = std::stod(cells[at++]);
    us.push_back(u);
    ws.push_back(w);
    ys.push_back(y);
  }
  if (us.empty()) throw ConfigError("read_dataset_csv: no samples");
  Dataset ds(n_u, n_w, n_y, static_cast<Eigen::Index>(us.size()));
  for (std::size_t i = 0; i < us.size(); ++i) ds.push(us[i], ws[i], ys[i]);
  return ds;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("read_dataset_csv: cannot open " + path);
  return read_dataset_csv(f);
}

}  // namespace rdpc
