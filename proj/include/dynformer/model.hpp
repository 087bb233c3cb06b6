#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynformer/attention.hpp"
#include "dynformer/autodiff.hpp"
#include "dynformer/spectral.hpp"

namespace dynformer {

enum class Flow { kHierarchical, kParallel, kHybrid };
enum class AttentionKind { kKronecker, kClassical, kLinear };
enum class Embedding { kSpectral, kPhysical };
enum class Mixing { kMixing, kAdding, kGlobalOnly };
enum class Decomposition { kOn, kOff };

struct AblationConfig {
  AttentionKind attention = AttentionKind::kKronecker;
  Embedding embedding = Embedding::kSpectral;
  Mixing mixing = Mixing::kMixing;
  Decomposition decomposition = Decomposition::kOn;
  Flow flow = Flow::kHybrid;

  friend bool operator==(const AblationConfig&, const AblationConfig&) = default;
};

// Every reachable ablation cell, 3 * 2 * 3 * 2 * 3 of them.
std::vector<AblationConfig> all_ablation_configs();
// The default cell followed by every cell that changes exactly one axis.
std::vector<AblationConfig> one_axis_ablation_configs();

std::string to_string(Flow f);
std::string to_string(AttentionKind a);
std::string to_string(Embedding e);
std::string to_string(Mixing m);
std::string to_string(Decomposition d);
// Accepts the names produced by to_string; "sequential" is an alias for
// the hierarchical flow.
Flow parse_flow(const std::string& s);
AttentionKind parse_attention(const std::string& s);
Embedding parse_embedding(const std::string& s);
Mixing parse_mixing(const std::string& s);
Decomposition parse_decomposition(const std::string& s);

struct ModelConfig {
  std::size_t d_in = 1;
  std::size_t d_out = 1;
  std::size_t d_n = 8;
  std::size_t layers = 2;
  ModeSet modes{4, 4};
  std::size_t heads = 2;
  std::size_t n_linear = 1;
  std::size_t n_nonlinear = 1;
  double rope_base = 10000.0;
  AblationConfig ablation;

  // Throws ValidationError listing every invalid field.
  void validate() const;
  std::size_t head_dim() const { return d_n / heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct AffineParams {
  Parameter* w = nullptr;
  Parameter* b = nullptr;
};

struct LgmParams {
  AffineParams local_in;
  std::optional<AffineParams> local_out;  // present on nonlinear branches
  Parameter* spectral_kernel = nullptr;   // spectral embedding
  AffineParams embed;                     // physical embedding
  AffineParams proj_x, proj_y;            // Kronecker axis projections
  std::vector<std::array<AffineParams, 3>> heads;  // q, k, v per head
  AffineParams global_out;
};

struct FsdlParams {
  std::vector<LgmParams> linear;
  std::vector<LgmParams> nonlinear;
  AffineParams psi_in, psi_out;
  Parameter* dt = nullptr;  // per-layer step (hybrid flow)
};

// Resolves each Parameter to one tape leaf per forward pass.
class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape) : tape_(tape) {}
  Var operator()(Parameter* p);
  AffineVars operator()(const AffineParams& a);
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  std::unordered_map<Parameter*, Var> bound_;
};

class DynFormer {
 public:
  DynFormer(const ModelConfig& cfg, std::uint64_t seed);
  DynFormer(const DynFormer&) = delete;
  DynFormer& operator=(const DynFormer&) = delete;

  const ModelConfig& config() const { return cfg_; }

  // u: [B, N1, N2, d_in] -> [B, N1, N2, d_out].
  Var forward(Tape& tape, Var u);
  Tensor predict(const Tensor& u);

  // Building blocks, exposed for tests. `v` is a latent [B, N1, N2, d_n].
  Var lift(ParamBinder& bind, Var u);
  Var project(ParamBinder& bind, Var v);
  Var local_branch(ParamBinder& bind, const LgmParams& p, Var v);
  Var global_branch(ParamBinder& bind, const LgmParams& p, Var v);
  Var lgm(ParamBinder& bind, const LgmParams& p, Var v);
  Var fsdl(ParamBinder& bind, const FsdlParams& p, Var v);
  Var evolve(ParamBinder& bind, Var v0);

  std::deque<Parameter>& parameters() { return params_; }
  const std::deque<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  std::size_t parameter_count() const;
  void zero_grad();

  std::vector<FsdlParams>& layers() { return layers_; }
  Parameter* shared_dt() { return shared_dt_; }
  AffineParams lift_params() const { return up_; }
  AffineParams project_params() const { return down_; }

 private:
  Parameter* add_param(std::string name, Tensor value);
  AffineParams add_affine(const std::string& name, std::size_t din, std::size_t dout);
  LgmParams add_lgm(const std::string& name, bool nonlinear);

  ModelConfig cfg_;
  std::mt19937_64 rng_;
  std::deque<Parameter> params_;
  AffineParams up_, down_;
  std::vector<FsdlParams> layers_;
  Parameter* shared_dt_ = nullptr;  // hierarchical and parallel flows
};

}  // namespace dynformer
