#pragma once

// Parameter storage shared by the encoder and the flow field. All tensors
// live in one contiguous buffer with parallel gradient and Adam-moment
// buffers, so the optimizer and checkpoint code can treat the model as a
// single flat vector while the math code addresses tensors by name.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "flowrec/rng.hpp"

namespace flowrec {

struct ModelConfig {
  int32_t n_items = 0;   // real catalog size; embedding table has n_items+1 rows (row 0 = pad)
  int32_t d = 128;
  int32_t layers = 4;
  int32_t heads = 4;
  int32_t max_len = 50;
  int32_t flow_hidden = 0;  // 0 means 2*d
  double emb_dropout = 0.1;
  double hidden_dropout = 0.3;
  bool gru_encoder = false;       // ablation: GRU instead of the Transformer
  bool learned_time_proj = false; // extra affine on top of the sinusoidal time code

  int32_t flow_h() const { return flow_hidden > 0 ? flow_hidden : 2 * d; }
  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  int32_t rows = 0;
  int32_t cols = 0;
  size_t offset = 0;
  size_t size() const { return (size_t)rows * cols; }
};

class ParamStore {
 public:
  static ParamStore build(const ModelConfig& cfg);

  // Truncated normal (std 0.02, clipped at 2 std) for weights, zeros for
  // biases, ones for layer-norm gains, zeros for the flow output layer.
  void init_params(RngStream& rng);

  const ModelConfig& cfg() const { return cfg_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  double* p(std::string_view name) { return value_.data() + find(name).offset; }
  const double* p(std::string_view name) const { return value_.data() + find(name).offset; }
  double* g(std::string_view name) { return grad_.data() + find(name).offset; }
  const double* g(std::string_view name) const { return grad_.data() + find(name).offset; }
  const TensorInfo& info(std::string_view name) const { return find(name); }
  bool has(std::string_view name) const;

  std::vector<double>& values() { return value_; }
  const std::vector<double>& values() const { return value_; }
  std::vector<double>& grads() { return grad_; }
  const std::vector<double>& grads() const { return grad_; }
  std::vector<double>& adam_m() { return m_; }
  const std::vector<double>& adam_m() const { return m_; }
  std::vector<double>& adam_v() { return v_; }
  const std::vector<double>& adam_v() const { return v_; }
  int64_t adam_step_count() const { return step_; }
  void set_adam_step_count(int64_t s) { step_ = s; }

  size_t n_params() const { return value_.size(); }
  void zero_grad();

  // One Adam update over every parameter; increments the step count.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

  // Global L2 clip of the gradient buffer (no-op when norm <= max_norm).
  void clip_grad_norm(double max_norm);

 private:
  const TensorInfo& find(std::string_view name) const;
  void add_tensor(const std::string& name, int32_t rows, int32_t cols);

  ModelConfig cfg_;
  std::vector<TensorInfo> tensors_;
  std::vector<double> value_, grad_, m_, v_;
  int64_t step_ = 0;
};

// Raw Adam update, exposed so tests can check it against the closed form.
void adam_update(double* p, const double* g, double* m, double* v, size_t n,
                 int64_t step, double lr, double beta1, double beta2, double eps);

}  // namespace flowrec
