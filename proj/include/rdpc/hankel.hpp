#pragma once

#include <iosfwd>
#include <string>

#include <Eigen/Core>

namespace rdpc {

// Ring buffer of synchronized (u, w, y) samples; index 0 is the oldest
// retained sample. Pushing at capacity drops the oldest sample.
class Dataset {
 public:
  Dataset(Eigen::Index n_u, Eigen::Index n_w, Eigen::Index n_y, Eigen::Index capacity);

  Eigen::Index n_u() const { return u_.rows(); }
  Eigen::Index n_w() const { return w_.rows(); }
  Eigen::Index n_y() const { return y_.rows(); }
  Eigen::Index capacity() const { return u_.cols(); }
  Eigen::Index size() const { return size_; }

  void push(const Eigen::VectorXd& u, const Eigen::VectorXd& w, const Eigen::VectorXd& y);

  Eigen::VectorXd u_at(Eigen::Index i) const;
  Eigen::VectorXd w_at(Eigen::Index i) const;
  Eigen::VectorXd y_at(Eigen::Index i) const;

  // Time-ordered copies, one column per sample.
  Eigen::MatrixXd u_signal() const;
  Eigen::MatrixXd w_signal() const;
  Eigen::MatrixXd y_signal() const;

 private:
  Eigen::MatrixXd u_, w_, y_;  // dim x capacity, column = sample
  Eigen::Index head_ = 0;      // physical column of logical index 0
  Eigen::Index size_ = 0;

  Eigen::Index phys(Eigen::Index i) const;
};

void push_sample(Dataset& ds, const Eigen::VectorXd& u, const Eigen::VectorXd& w,
                 const Eigen::VectorXd& y);

// Hankel matrix of the given depth: block (i, j) = signal column i + j.
Eigen::MatrixXd build_hankel(const Eigen::MatrixXd& signal, Eigen::Index depth);

// Depth-L Hankel blocks of all three channels, split at t_init.
struct HankelStack {
  Eigen::Index t_init = 0, n_h = 0;
  Eigen::Index n_u = 0, n_w = 0, n_y = 0, n_c = 0;
  Eigen::MatrixXd y_init, u_init, w_init;  // depth t_init
  Eigen::MatrixXd u_pred, w_pred, y_pred;  // depth n_h

  Eigen::Index depth() const { return t_init + n_h; }
  Eigen::Index h_rows() const { return depth() * (n_u + n_w); }
  // The equality-constraint stack [u_init; w_init; u_pred; w_pred].
  Eigen::MatrixXd h() const;
};

HankelStack build_stack(const Dataset& ds, Eigen::Index t_init, Eigen::Index n_h);

// Numerical rank via singular values, threshold sigma_max * max(rows, cols) * 1e-10.
Eigen::Index numerical_rank(const Eigen::MatrixXd& m);

// True iff the depth-`order` Hankel matrix of the signal has full row rank.
// Signals shorter than `order` windows are not persistently exciting.
bool is_persistently_exciting(const Eigen::MatrixXd& signal, Eigen::Index order);

// Zero-input heuristic: true ("excitation needed") iff max-norm(u) <= tol.
bool pe_heuristic(const Eigen::VectorXd& u_nominal, double tol);

// CSV interface: header `t,u_1..u_{n_u},w_1..w_{n_w},y_1..y_{n_y}`, one sample
// per line. Import infers dimensions from the header; capacity = sample count.
void write_dataset_csv(std::ostream& out, const Dataset& ds);
void write_dataset_csv(const std::string& path, const Dataset& ds);
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::string& path);

}  // namespace rdpc
