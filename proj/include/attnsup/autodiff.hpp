#pragma once

// Tape-based reverse-mode automatic differentiation over dense double
// matrices. A computation builds nodes on a tape (node ids are ints, inputs
// always have smaller ids than outputs), backward() walks the tape in reverse
// accumulating gradients. The primitive set is exactly what the encoder and
// its losses need; every primitive's backward rule is validated against
// central finite differences (see grad_check below and the tests).

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "attnsup/matrix.hpp"

namespace attnsup {

enum class op_kind {
  leaf,
  constant,
  matmul,        // A * B
  matmul_nt,     // A * B^T
  add,
  sub,
  scale,               // c * A
  add_row_broadcast,   // A (m x n) + row (1 x n)
  add_scalar_broadcast,// A + s (s is a 1x1 node)
  row_softmax,
  tanh_op,
  sigmoid_op,
  layer_norm,          // per-row, inputs {x, gamma, beta}
  embedding_rows,      // gather rows of a table by index
  concat_rows,
  slice_rows,
  sum_all,             // -> 1x1
  mean_all,            // -> 1x1
  square_op,           // elementwise a^2
  normalize_rows,      // y_ij = a_ij / sum_j a_ij
  softmax_cross_entropy,  // mean over rows of -log softmax(logits)[target]
  kl_vs_target,        // sum over rows of KL(target_row || q_row) -> 1x1
};

class tape {
 public:
  struct node {
    op_kind kind;
    matrix value;
    matrix grad;
    std::vector<int> inputs;
    double scalar = 0.0;        // scale factor / layer_norm epsilon
    std::vector<int> indices;   // embedding row ids / class targets
    int slice_start = 0;
    matrix aux;                 // cached forward intermediates (see each op)
    matrix aux2;
  };

  int leaf(const matrix& m) { return push(op_kind::leaf, m, {}); }
  int constant(const matrix& m) { return push(op_kind::constant, m, {}); }

  int matmul(int a, int b) {
    check(a); check(b);
    const matrix& A = nodes_[a].value;
    const matrix& B = nodes_[b].value;
    if (A.cols() != B.rows())
      throw std::invalid_argument("matmul: inner dimensions differ " + A.shape_string() + " vs " + B.shape_string());
    matrix out(A.rows(), B.cols());
    mm_nn_acc(A, B, out);
    return push(op_kind::matmul, std::move(out), {a, b});
  }

  int matmul_nt(int a, int b) {
    check(a); check(b);
    const matrix& A = nodes_[a].value;
    const matrix& B = nodes_[b].value;
    if (A.cols() != B.cols())
      throw std::invalid_argument("matmul_nt: inner dimensions differ " + A.shape_string() + " vs " + B.shape_string());
    matrix out(A.rows(), B.rows());
    mm_nt_acc(A, B, out);
    return push(op_kind::matmul_nt, std::move(out), {a, b});
  }

  int add(int a, int b) {
    const matrix& A = value_checked(a, b, "add");
    matrix out = A;
    const matrix& B = nodes_[b].value;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) += B(i, j);
    return push(op_kind::add, std::move(out), {a, b});
  }

  int sub(int a, int b) {
    const matrix& A = value_checked(a, b, "sub");
    matrix out = A;
    const matrix& B = nodes_[b].value;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) -= B(i, j);
    return push(op_kind::sub, std::move(out), {a, b});
  }

  int scale(int a, double c) {
    check(a);
    matrix out = nodes_[a].value;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) *= c;
    int id = push(op_kind::scale, std::move(out), {a});
    nodes_[id].scalar = c;
    return id;
  }

  int add_row_broadcast(int a, int row) {
    check(a); check(row);
    const matrix& A = nodes_[a].value;
    const matrix& R = nodes_[row].value;
    if (R.rows() != 1 || R.cols() != A.cols())
      throw std::invalid_argument("add_row_broadcast: row must be 1x" + std::to_string(A.cols()));
    matrix out = A;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) += R(0, j);
    return push(op_kind::add_row_broadcast, std::move(out), {a, row});
  }

  int add_scalar_broadcast(int a, int s) {
    check(a); check(s);
    const matrix& A = nodes_[a].value;
    const matrix& S = nodes_[s].value;
    if (S.rows() != 1 || S.cols() != 1)
      throw std::invalid_argument("add_scalar_broadcast: scalar node must be 1x1");
    matrix out = A;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) += S(0, 0);
    return push(op_kind::add_scalar_broadcast, std::move(out), {a, s});
  }

  int row_softmax(int a) {
    check(a);
    const matrix& A = nodes_[a].value;
    matrix out(A.rows(), A.cols());
    for (int i = 0; i < A.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < A.cols(); ++j) mx = std::max(mx, A(i, j));
      double sum = 0.0;
      for (int j = 0; j < A.cols(); ++j) {
        out(i, j) = std::exp(A(i, j) - mx);
        sum += out(i, j);
      }
      for (int j = 0; j < A.cols(); ++j) out(i, j) /= sum;
    }
    return push(op_kind::row_softmax, std::move(out), {a});
  }

  int tanh_(int a) {
    check(a);
    matrix out = nodes_[a].value;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) = std::tanh(out(i, j));
    return push(op_kind::tanh_op, std::move(out), {a});
  }

  int sigmoid(int a) {
    check(a);
    matrix out = nodes_[a].value;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) = stable_sigmoid(out(i, j));
    return push(op_kind::sigmoid_op, std::move(out), {a});
  }

  // Per-row layer normalization with learned gain/bias rows (1 x n each).
  int layer_norm(int x, int gamma, int beta, double eps = 1e-5) {
    check(x); check(gamma); check(beta);
    const matrix& X = nodes_[x].value;
    const matrix& G = nodes_[gamma].value;
    const matrix& B = nodes_[beta].value;
    if (G.rows() != 1 || B.rows() != 1 || G.cols() != X.cols() || B.cols() != X.cols())
      throw std::invalid_argument("layer_norm: gamma/beta must be 1x" + std::to_string(X.cols()));
    const int m = X.rows(), n = X.cols();
    matrix out(m, n);
    matrix xhat(m, n);
    matrix inv_std(m, 1);
    for (int i = 0; i < m; ++i) {
      double mu = 0.0;
      for (int j = 0; j < n; ++j) mu += X(i, j);
      mu /= n;
      double var = 0.0;
      for (int j = 0; j < n; ++j) {
        const double d = X(i, j) - mu;
        var += d * d;
      }
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std(i, 0) = inv;
      for (int j = 0; j < n; ++j) {
        xhat(i, j) = (X(i, j) - mu) * inv;
        out(i, j) = G(0, j) * xhat(i, j) + B(0, j);
      }
    }
    int id = push(op_kind::layer_norm, std::move(out), {x, gamma, beta});
    nodes_[id].scalar = eps;
    nodes_[id].aux = std::move(xhat);
    nodes_[id].aux2 = std::move(inv_std);
    return id;
  }

  // Gather table rows by index; backward scatter-adds into the table grad.
  int embedding_rows(int table, const std::vector<int>& ids) {
    check(table);
    const matrix& T = nodes_[table].value;
    matrix out(static_cast<int>(ids.size()), T.cols());
    for (size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0 || ids[r] >= T.rows())
        throw std::out_of_range("embedding_rows: index " + std::to_string(ids[r]) + " outside table " + T.shape_string());
      for (int j = 0; j < T.cols(); ++j) out(static_cast<int>(r), j) = T(ids[r], j);
    }
    int id = push(op_kind::embedding_rows, std::move(out), {table});
    nodes_[id].indices = ids;
    return id;
  }

  int concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input list");
    int total_rows = 0;
    const int cols = nodes_.at(parts[0]).value.cols();
    for (int p : parts) {
      check(p);
      if (nodes_[p].value.cols() != cols)
        throw std::invalid_argument("concat_rows: column count mismatch");
      total_rows += nodes_[p].value.rows();
    }
    matrix out(total_rows, cols);
    int r = 0;
    for (int p : parts) {
      const matrix& P = nodes_[p].value;
      for (int i = 0; i < P.rows(); ++i, ++r)
        for (int j = 0; j < cols; ++j) out(r, j) = P(i, j);
    }
    return push(op_kind::concat_rows, std::move(out), parts);
  }

  int slice_rows(int a, int start, int count) {
    check(a);
    const matrix& A = nodes_[a].value;
    if (start < 0 || count < 0 || start + count > A.rows())
      throw std::out_of_range("slice_rows: range [" + std::to_string(start) + ", +" + std::to_string(count) + ") outside " + A.shape_string());
    matrix out(count, A.cols());
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < A.cols(); ++j) out(i, j) = A(start + i, j);
    int id = push(op_kind::slice_rows, std::move(out), {a});
    nodes_[id].slice_start = start;
    return id;
  }

  int sum_all(int a) {
    check(a);
    const matrix& A = nodes_[a].value;
    double s = 0.0;
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < A.cols(); ++j) s += A(i, j);
    return push(op_kind::sum_all, matrix(1, 1, s), {a});
  }

  int mean_all(int a) {
    check(a);
    const matrix& A = nodes_[a].value;
    if (A.empty()) throw std::invalid_argument("mean_all: empty matrix");
    double s = 0.0;
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < A.cols(); ++j) s += A(i, j);
    return push(op_kind::mean_all, matrix(1, 1, s / static_cast<double>(A.size())), {a});
  }

  int square(int a) {
    check(a);
    matrix out = nodes_[a].value;
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) *= out(i, j);
    return push(op_kind::square_op, std::move(out), {a});
  }

  // y_ij = a_ij / sum_k a_ik. Caller guarantees strictly positive row sums
  // (inputs here are sigmoid outputs).
  int normalize_rows(int a) {
    check(a);
    const matrix& A = nodes_[a].value;
    matrix out(A.rows(), A.cols());
    matrix sums(A.rows(), 1);
    for (int i = 0; i < A.rows(); ++i) {
      double s = 0.0;
      for (int j = 0; j < A.cols(); ++j) s += A(i, j);
      if (s == 0.0) throw std::domain_error("normalize_rows: zero row sum at row " + std::to_string(i));
      sums(i, 0) = s;
      for (int j = 0; j < A.cols(); ++j) out(i, j) = A(i, j) / s;
    }
    int id = push(op_kind::normalize_rows, std::move(out), {a});
    nodes_[id].aux = std::move(sums);
    return id;
  }

  // Mean over rows of -log softmax(logits_row)[target_row]. Returns 1x1.
  int softmax_cross_entropy(int logits, const std::vector<int>& targets) {
    check(logits);
    const matrix& L = nodes_[logits].value;
    if (static_cast<int>(targets.size()) != L.rows())
      throw std::invalid_argument("softmax_cross_entropy: need one target per row");
    matrix probs(L.rows(), L.cols());
    double loss = 0.0;
    for (int i = 0; i < L.rows(); ++i) {
      if (targets[i] < 0 || targets[i] >= L.cols())
        throw std::out_of_range("softmax_cross_entropy: target class " + std::to_string(targets[i]) + " outside " + L.shape_string());
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < L.cols(); ++j) mx = std::max(mx, L(i, j));
      double sum = 0.0;
      for (int j = 0; j < L.cols(); ++j) {
        probs(i, j) = std::exp(L(i, j) - mx);
        sum += probs(i, j);
      }
      for (int j = 0; j < L.cols(); ++j) probs(i, j) /= sum;
      loss -= std::log(probs(i, targets[i]));
    }
    loss /= L.rows();
    int id = push(op_kind::softmax_cross_entropy, matrix(1, 1, loss), {logits});
    nodes_[id].indices = targets;
    nodes_[id].aux = std::move(probs);
    return id;
  }

  // Sum over rows of KL(target_row || q_row) = sum_j t_j (log t_j - log q_j),
  // with 0 log 0 taken as 0. The target is a constant. Returns 1x1.
  int kl_vs_target(int q, const matrix& target) {
    check(q);
    const matrix& Q = nodes_[q].value;
    if (!Q.same_shape(target))
      throw std::invalid_argument("kl_vs_target: shape mismatch " + Q.shape_string() + " vs " + target.shape_string());
    double loss = 0.0;
    for (int i = 0; i < Q.rows(); ++i) {
      for (int j = 0; j < Q.cols(); ++j) {
        const double t = target(i, j);
        if (t <= 0.0) continue;
        const double qv = Q(i, j);
        if (qv <= 0.0) throw std::domain_error("kl_vs_target: zero probability where target mass is positive");
        loss += t * (std::log(t) - std::log(qv));
      }
    }
    int id = push(op_kind::kl_vs_target, matrix(1, 1, loss), {q});
    nodes_[id].aux = target;
    return id;
  }

  const matrix& value(int id) const { return nodes_.at(id).value; }
  const matrix& grad(int id) const { return nodes_.at(id).grad; }
  size_t size() const { return nodes_.size(); }
  void reset() { nodes_.clear(); }

  // Reverse sweep from loss_id. Gradients of every node are zeroed first, so
  // a tape can be replayed; leaves accumulate and are read via grad().
  void backward(int loss_id, double seed = 1.0) {
    check(loss_id);
    node& loss = nodes_[loss_id];
    if (loss.value.rows() != 1 || loss.value.cols() != 1)
      throw std::invalid_argument("backward: loss must be a 1x1 scalar, got " + loss.value.shape_string());
    for (auto& nd : nodes_) {
      if (!nd.grad.same_shape(nd.value)) nd.grad = matrix(nd.value.rows(), nd.value.cols());
      else nd.grad.fill(0.0);
    }
    loss.grad(0, 0) = seed;
    for (int id = loss_id; id >= 0; --id) backprop_node(id);
  }

 private:
  static double stable_sigmoid(double x) {
    if (x >= 0.0) {
      const double z = std::exp(-x);
      return 1.0 / (1.0 + z);
    }
    const double z = std::exp(x);
    return z / (1.0 + z);
  }

  void check(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw std::out_of_range("tape: node id " + std::to_string(id) + " does not exist");
  }

  const matrix& value_checked(int a, int b, const char* what) {
    check(a); check(b);
    if (!nodes_[a].value.same_shape(nodes_[b].value))
      throw std::invalid_argument(std::string(what) + ": shape mismatch " + nodes_[a].value.shape_string() + " vs " + nodes_[b].value.shape_string());
    return nodes_[a].value;
  }

  int push(op_kind kind, matrix value, std::vector<int> inputs) {
    node nd;
    nd.kind = kind;
    nd.value = std::move(value);
    nd.inputs = std::move(inputs);
    nodes_.push_back(std::move(nd));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void backprop_node(int id) {
    node& nd = nodes_[id];
    const matrix& G = nd.grad;
    switch (nd.kind) {
      case op_kind::leaf:
      case op_kind::constant:
        return;
      case op_kind::matmul: {
        // C = A*B: gA += G*B^T, gB += A^T*G
        mm_nt_acc(G, nodes_[nd.inputs[1]].value, nodes_[nd.inputs[0]].grad);
        mm_tn_acc(nodes_[nd.inputs[0]].value, G, nodes_[nd.inputs[1]].grad);
        return;
      }
      case op_kind::matmul_nt: {
        // C = A*B^T: gA += G*B, gB += G^T*A
        mm_nn_acc(G, nodes_[nd.inputs[1]].value, nodes_[nd.inputs[0]].grad);
        mm_tn_acc(G, nodes_[nd.inputs[0]].value, nodes_[nd.inputs[1]].grad);
        return;
      }
      case op_kind::add: {
        acc(nodes_[nd.inputs[0]].grad, G, 1.0);
        acc(nodes_[nd.inputs[1]].grad, G, 1.0);
        return;
      }
      case op_kind::sub: {
        acc(nodes_[nd.inputs[0]].grad, G, 1.0);
        acc(nodes_[nd.inputs[1]].grad, G, -1.0);
        return;
      }
      case op_kind::scale: {
        acc(nodes_[nd.inputs[0]].grad, G, nd.scalar);
        return;
      }
      case op_kind::add_row_broadcast: {
        acc(nodes_[nd.inputs[0]].grad, G, 1.0);
        matrix& gr = nodes_[nd.inputs[1]].grad;
        for (int i = 0; i < G.rows(); ++i)
          for (int j = 0; j < G.cols(); ++j) gr(0, j) += G(i, j);
        return;
      }
      case op_kind::add_scalar_broadcast: {
        acc(nodes_[nd.inputs[0]].grad, G, 1.0);
        matrix& gs = nodes_[nd.inputs[1]].grad;
        for (int i = 0; i < G.rows(); ++i)
          for (int j = 0; j < G.cols(); ++j) gs(0, 0) += G(i, j);
        return;
      }
      case op_kind::row_softmax: {
        const matrix& Y = nd.value;
        matrix& gx = nodes_[nd.inputs[0]].grad;
        for (int i = 0; i < Y.rows(); ++i) {
          double dot = 0.0;
          for (int j = 0; j < Y.cols(); ++j) dot += G(i, j) * Y(i, j);
          for (int j = 0; j < Y.cols(); ++j) gx(i, j) += Y(i, j) * (G(i, j) - dot);
        }
        return;
      }
      case op_kind::tanh_op: {
        const matrix& Y = nd.value;
        matrix& gx = nodes_[nd.inputs[0]].grad;
        for (int i = 0; i < Y.rows(); ++i)
          for (int j = 0; j < Y.cols(); ++j) gx(i, j) += G(i, j) * (1.0 - Y(i, j) * Y(i, j));
        return;
      }
      case op_kind::sigmoid_op: {
        const matrix& Y = nd.value;
        matrix& gx = nodes_[nd.inputs[0]].grad;
        for (int i = 0; i < Y.rows(); ++i)
          for (int j = 0; j < Y.cols(); ++j) gx(i, j) += G(i, j) * Y(i, j) * (1.0 - Y(i, j));
        return;
      }
      case op_kind::layer_norm: {
        const matrix& xhat = nd.aux;
        const matrix& inv_std = nd.aux2;
        const matrix& gamma = nodes_[nd.inputs[1]].value;
        matrix& gx = nodes_[nd.inputs[0]].grad;
        matrix& ggamma = nodes_[nd.inputs[1]].grad;
        matrix& gbeta = nodes_[nd.inputs[2]].grad;
        const int m = xhat.rows(), n = xhat.cols();
        for (int i = 0; i < m; ++i) {
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (int j = 0; j < n; ++j) {
            const double gy = G(i, j) * gamma(0, j);
            sum_gy += gy;
            sum_gy_xhat += gy * xhat(i, j);
            ggamma(0, j) += G(i, j) * xhat(i, j);
            gbeta(0, j) += G(i, j);
          }
          const double inv = inv_std(i, 0);
          for (int j = 0; j < n; ++j) {
            const double gy = G(i, j) * gamma(0, j);
            gx(i, j) += inv * (gy - sum_gy / n - xhat(i, j) * sum_gy_xhat / n);
          }
        }
        return;
      }
      case op_kind::embedding_rows: {
        matrix& gt = nodes_[nd.inputs[0]].grad;
        for (size_t r = 0; r < nd.indices.size(); ++r)
          for (int j = 0; j < G.cols(); ++j) gt(nd.indices[r], j) += G(static_cast<int>(r), j);
        return;
      }
      case op_kind::concat_rows: {
        int r = 0;
        for (int p : nd.inputs) {
          matrix& gp = nodes_[p].grad;
          for (int i = 0; i < gp.rows(); ++i, ++r)
            for (int j = 0; j < gp.cols(); ++j) gp(i, j) += G(r, j);
        }
        return;
      }
      case op_kind::slice_rows: {
        matrix& ga = nodes_[nd.inputs[0]].grad;
        for (int i = 0; i < G.rows(); ++i)
          for (int j = 0; j < G.cols(); ++j) ga(nd.slice_start + i, j) += G(i, j);
        return;
      }
      case op_kind::sum_all: {
        acc_scalar(nodes_[nd.inputs[0]].grad, G(0, 0));
        return;
      }
      case op_kind::mean_all: {
        acc_scalar(nodes_[nd.inputs[0]].grad, G(0, 0) / static_cast<double>(nodes_[nd.inputs[0]].value.size()));
        return;
      }
      case op_kind::square_op: {
        const matrix& X = nodes_[nd.inputs[0]].value;
        matrix& gx = nodes_[nd.inputs[0]].grad;
        for (int i = 0; i < X.rows(); ++i)
          for (int j = 0; j < X.cols(); ++j) gx(i, j) += 2.0 * G(i, j) * X(i, j);
        return;
      }
      case op_kind::normalize_rows: {
        const matrix& Y = nd.value;
        const matrix& sums = nd.aux;
        matrix& gx = nodes_[nd.inputs[0]].grad;
        for (int i = 0; i < Y.rows(); ++i) {
          double dot = 0.0;
          for (int j = 0; j < Y.cols(); ++j) dot += G(i, j) * Y(i, j);
          for (int j = 0; j < Y.cols(); ++j) gx(i, j) += (G(i, j) - dot) / sums(i, 0);
        }
        return;
      }
      case op_kind::softmax_cross_entropy: {
        const matrix& probs = nd.aux;
        matrix& gl = nodes_[nd.inputs[0]].grad;
        const double g = G(0, 0) / probs.rows();
        for (int i = 0; i < probs.rows(); ++i) {
          for (int j = 0; j < probs.cols(); ++j) {
            const double onehot = (j == nd.indices[i]) ? 1.0 : 0.0;
            gl(i, j) += g * (probs(i, j) - onehot);
          }
        }
        return;
      }
      case op_kind::kl_vs_target: {
        const matrix& T = nd.aux;
        const matrix& Q = nodes_[nd.inputs[0]].value;
        matrix& gq = nodes_[nd.inputs[0]].grad;
        const double g = G(0, 0);
        for (int i = 0; i < T.rows(); ++i)
          for (int j = 0; j < T.cols(); ++j)
            if (T(i, j) > 0.0) gq(i, j) -= g * T(i, j) / Q(i, j);
        return;
      }
    }
  }

  static void acc(matrix& dst, const matrix& src, double c) {
    for (int i = 0; i < dst.rows(); ++i)
      for (int j = 0; j < dst.cols(); ++j) dst(i, j) += c * src(i, j);
  }

  static void acc_scalar(matrix& dst, double v) {
    for (int i = 0; i < dst.rows(); ++i)
      for (int j = 0; j < dst.cols(); ++j) dst(i, j) += v;
  }

  std::vector<node> nodes_;
};

struct grad_check_result {
  double max_rel_error = 0.0;
  std::string worst_entry;  // "name[i,j]" of the entry with the largest error
};

// Compares backward() gradients against central finite differences
// (f(p+eps) - f(p-eps)) / (2 eps) for every entry of every parameter.
// `build` receives a fresh tape and the leaf ids of the parameters (in the
// order given) and must return the id of a scalar loss node.
//
// `abs_floor` is the denominator floor of the relative error: entries whose
// analytic and numeric gradients both sit below it are compared against the
// floor itself, because their difference is finite-difference cancellation
// noise rather than signal. Raise it for graphs that contain directions the
// loss is provably invariant to — a key bias under row softmax shifts every
// logit of a row equally, so its true gradient is exactly zero while the
// central difference returns rounding jitter.
template <typename F>
grad_check_result grad_check(F&& build, std::vector<matrix> params, double eps = 1e-5,
                             std::vector<std::string> names = {}, double abs_floor = 1e-8) {
  if (names.empty())
    for (size_t p = 0; p < params.size(); ++p) names.push_back("param" + std::to_string(p));
  if (names.size() != params.size())
    throw std::invalid_argument("grad_check: one name per parameter required");

  auto forward = [&](const std::vector<matrix>& ps, tape& t, std::vector<int>& ids) {
    ids.clear();
    for (const matrix& p : ps) ids.push_back(t.leaf(p));
    return build(t, ids);
  };

  tape t;
  std::vector<int> ids;
  const int loss_id = forward(params, t, ids);
  t.backward(loss_id);
  std::vector<matrix> analytic;
  for (int id : ids) analytic.push_back(t.grad(id));

  grad_check_result result;
  for (size_t p = 0; p < params.size(); ++p) {
    for (int i = 0; i < params[p].rows(); ++i) {
      for (int j = 0; j < params[p].cols(); ++j) {
        const double saved = params[p](i, j);
        params[p](i, j) = saved + eps;
        tape tp;
        std::vector<int> idsp;
        const double plus = tp.value(forward(params, tp, idsp))(0, 0);
        params[p](i, j) = saved - eps;
        tape tm;
        std::vector<int> idsm;
        const double minus = tm.value(forward(params, tm, idsm))(0, 0);
        params[p](i, j) = saved;
        const double numeric = (plus - minus) / (2.0 * eps);
        const double a = analytic[p](i, j);
        const std::string entry = names[p] + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
        if (!std::isfinite(numeric) || !std::isfinite(a))
          throw std::runtime_error("grad_check: non-finite gradient at " + entry);
        const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), abs_floor});
        if (rel > result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_entry = entry;
        }
      }
    }
  }
  return result;
}

}  // namespace attnsup
