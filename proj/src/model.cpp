#include "dynformer/model.hpp"

#include <cmath>

#include "dynformer/ablation.hpp"
#include "dynformer/error.hpp"

namespace dynformer {

// ---- enums ------------------------------------------------------------------------

std::vector<AblationConfig> all_ablation_configs() {
  std::vector<AblationConfig> out;
  for (auto a : {AttentionKind::kKronecker, AttentionKind::kClassical, AttentionKind::kLinear})
    for (auto e : {Embedding::kSpectral, Embedding::kPhysical})
      for (auto m : {Mixing::kMixing, Mixing::kAdding, Mixing::kGlobalOnly})
        for (auto d : {Decomposition::kOn, Decomposition::kOff})
          for (auto f : {Flow::kHybrid, Flow::kParallel, Flow::kHierarchical})
            out.push_back({a, e, m, d, f});
  return out;
}

std::vector<AblationConfig> one_axis_ablation_configs() {
  const AblationConfig base;
  std::vector<AblationConfig> out{base};
  for (const AblationConfig& c : all_ablation_configs()) {
    const int changed = (c.attention != base.attention) + (c.embedding != base.embedding) +
                        (c.mixing != base.mixing) + (c.decomposition != base.decomposition) +
                        (c.flow != base.flow);
    if (changed == 1) out.push_back(c);
  }
  return out;
}

std::string to_string(Flow f) {
  switch (f) {
    case Flow::kHierarchical: return "hierarchical";
    case Flow::kParallel: return "parallel";
    case Flow::kHybrid: return "hybrid";
  }
  return "?";
}
std::string to_string(AttentionKind a) {
  switch (a) {
    case AttentionKind::kKronecker: return "kronecker";
    case AttentionKind::kClassical: return "classical";
    case AttentionKind::kLinear: return "linear";
  }
  return "?";
}
std::string to_string(Embedding e) {
  return e == Embedding::kSpectral ? "spectral" : "physical";
}
std::string to_string(Mixing m) {
  switch (m) {
    case Mixing::kMixing: return "mixing";
    case Mixing::kAdding: return "adding";
    case Mixing::kGlobalOnly: return "global_only";
  }
  return "?";
}
std::string to_string(Decomposition d) { return d == Decomposition::kOn ? "on" : "off"; }

namespace {

[[noreturn]] void bad_enum(const char* what, const std::string& got, const char* allowed) {
  throw ValidationError(std::string(what) + ": unknown value '" + got + "' (expected one of " +
                        allowed + ")");
}

}  // namespace

Flow parse_flow(const std::string& s) {
  if (s == "hierarchical" || s == "sequential") return Flow::kHierarchical;
  if (s == "parallel") return Flow::kParallel;
  if (s == "hybrid") return Flow::kHybrid;
  bad_enum("flow", s, "hierarchical, sequential, parallel, hybrid");
}
AttentionKind parse_attention(const std::string& s) {
  if (s == "kronecker") return AttentionKind::kKronecker;
  if (s == "classical") return AttentionKind::kClassical;
  if (s == "linear") return AttentionKind::kLinear;
  bad_enum("attention", s, "kronecker, classical, linear");
}
Embedding parse_embedding(const std::string& s) {
  if (s == "spectral") return Embedding::kSpectral;
  if (s == "physical") return Embedding::kPhysical;
  bad_enum("embedding", s, "spectral, physical");
}
Mixing parse_mixing(const std::string& s) {
  if (s == "mixing") return Mixing::kMixing;
  if (s == "adding") return Mixing::kAdding;
  if (s == "global_only") return Mixing::kGlobalOnly;
  bad_enum("mixing", s, "mixing, adding, global_only");
}
Decomposition parse_decomposition(const std::string& s) {
  if (s == "on") return Decomposition::kOn;
  if (s == "off") return Decomposition::kOff;
  bad_enum("decomposition", s, "on, off");
}

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  auto positive = [&](std::size_t v, const char* name) {
    if (v == 0) problems.push_back(std::string(name) + " must be positive");
  };
  positive(d_in, "d_in");
  positive(d_out, "d_out");
  positive(d_n, "d_n");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(n_linear, "n_linear");
  positive(n_nonlinear, "n_nonlinear");
  positive(modes.m1, "modes.m1");
  positive(modes.m2, "modes.m2");
  if (heads > 0 && d_n % heads != 0) {
    problems.push_back("d_n (" + std::to_string(d_n) + ") must be divisible by heads (" +
                       std::to_string(heads) + ")");
  } else if (heads > 0 && ablation.attention == AttentionKind::kKronecker && head_dim() % 2 != 0) {
    problems.push_back("head dimension d_n/heads = " + std::to_string(head_dim()) +
                       " must be even for rotary embeddings");
  }
  if (!(rope_base > 0.0)) problems.push_back("rope_base must be positive");
  if (!problems.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
}

// ---- binder ---------------------------------------------------------------------

Var ParamBinder::operator()(Parameter* p) {
  auto [it, inserted] = bound_.try_emplace(p);
  if (inserted) it->second = tape_.param(*p);
  return it->second;
}

AffineVars ParamBinder::operator()(const AffineParams& a) { return {(*this)(a.w), (*this)(a.b)}; }

// ---- construction -----------------------------------------------------------------

Parameter* DynFormer::add_param(std::string name, Tensor value) {
  params_.emplace_back(std::move(name), std::move(value));
  return &params_.back();
}

AffineParams DynFormer::add_affine(const std::string& name, std::size_t din, std::size_t dout) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(din));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({din, dout}), b({dout});
  for (double& v : w.data()) v = dist(rng_);
  for (double& v : b.data()) v = dist(rng_);
  return {add_param(name + ".w", std::move(w)), add_param(name + ".b", std::move(b))};
}

LgmParams DynFormer::add_lgm(const std::string& name, bool nonlinear) {
  const std::size_t d = cfg_.d_n;
  LgmParams p;
  p.local_in = add_affine(name + ".local_in", d, d);
  if (nonlinear) p.local_out = add_affine(name + ".local_out", d, d);
  if (cfg_.ablation.embedding == Embedding::kSpectral) {
    Parameter k = make_spectral_kernel(name + ".spectral", d, d, cfg_.modes, rng_);
    p.spectral_kernel = add_param(k.name(), k.value());
  } else {
    p.embed = add_affine(name + ".embed", d, d);
  }
  if (cfg_.ablation.attention == AttentionKind::kKronecker) {
    p.proj_x = add_affine(name + ".proj_x", d, d);
    p.proj_y = add_affine(name + ".proj_y", d, d);
    const std::size_t dk = cfg_.head_dim();
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      const std::string hn = name + ".head" + std::to_string(h);
      p.heads.push_back({add_affine(hn + ".q", d, dk), add_affine(hn + ".k", d, dk),
                         add_affine(hn + ".v", d, dk)});
    }
  } else {
    p.heads.push_back({add_affine(name + ".q", d, d), add_affine(name + ".k", d, d),
                       add_affine(name + ".v", d, d)});
  }
  p.global_out = add_affine(name + ".global_out", d, d);
  return p;
}

DynFormer::DynFormer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
  cfg_.validate();
  const Tensor dt0({1}, 1.0 / static_cast<double>(cfg_.layers));
  up_ = add_affine("lift", cfg_.d_in, cfg_.d_n);
  if (cfg_.ablation.flow != Flow::kHybrid) shared_dt_ = add_param("dt", dt0);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string ln = "layer" + std::to_string(l);
    FsdlParams f;
    for (std::size_t a = 0; a < cfg_.n_linear; ++a)
      f.linear.push_back(add_lgm(ln + ".linear" + std::to_string(a), false));
    for (std::size_t b = 0; b < cfg_.n_nonlinear; ++b)
      f.nonlinear.push_back(add_lgm(ln + ".nonlinear" + std::to_string(b), true));
    f.psi_in = add_affine(ln + ".psi_in", cfg_.d_n, 2 * cfg_.d_n);
    f.psi_out = add_affine(ln + ".psi_out", 2 * cfg_.d_n, cfg_.d_n);
    if (cfg_.ablation.flow == Flow::kHybrid) f.dt = add_param(ln + ".dt", dt0);
    layers_.push_back(std::move(f));
  }
  down_ = add_affine("project", cfg_.d_n, cfg_.d_out);
}

Parameter& DynFormer::parameter(const std::string& name) {
  for (Parameter& p : params_) {
    if (p.name() == name) return p;
  }
  throw ValidationError("no parameter named '" + name + "'");
}

std::size_t DynFormer::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.size();
  return n;
}

void DynFormer::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

// ---- forward ----------------------------------------------------------------------

namespace {

Var affine(ParamBinder& bind, const AffineParams& p, Var x) {
  const AffineVars a = bind(p);
  return linear(x, a.w, a.b);
}

}  // namespace

Var DynFormer::lift(ParamBinder& bind, Var u) { return affine(bind, up_, u); }

Var DynFormer::project(ParamBinder& bind, Var v) { return affine(bind, down_, v); }

Var DynFormer::local_branch(ParamBinder& bind, const LgmParams& p, Var v) {
  Var h = affine(bind, p.local_in, v);
  if (p.local_out) h = affine(bind, *p.local_out, gelu(h));
  return h;
}

Var DynFormer::global_branch(ParamBinder& bind, const LgmParams& p, Var v) {
  const bool decompose = cfg_.ablation.decomposition == Decomposition::kOn;
  Var embedded;
  if (cfg_.ablation.embedding == Embedding::kSpectral) {
    embedded = spectral_embed(v, bind(p.spectral_kernel), cfg_.modes);
    if (!decompose) embedded = add(embedded, project_small_scale(v, cfg_.modes));
  } else {
    embedded = affine(bind, p.embed, decompose ? project_large_scale(v, cfg_.modes) : v);
  }

  std::vector<Var> per_sample;
  const std::size_t batch = embedded.shape()[0];
  per_sample.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Var u = select(embedded, b);
    switch (cfg_.ablation.attention) {
      case AttentionKind::kKronecker: {
        KroneckerAttentionVars vars{bind(p.proj_x), bind(p.proj_y), {}};
        for (const auto& h : p.heads) vars.heads.push_back({bind(h[0]), bind(h[1]), bind(h[2])});
        per_sample.push_back(kronecker_attention(u, vars, cfg_.rope_base));
        break;
      }
      case AttentionKind::kClassical:
      case AttentionKind::kLinear: {
        const auto& h = p.heads.front();
        const HeadVars qkv{bind(h[0]), bind(h[1]), bind(h[2])};
        per_sample.push_back(cfg_.ablation.attention == AttentionKind::kClassical
                                 ? classical_attention(u, qkv)
                                 : linear_attention(u, qkv));
        break;
      }
    }
  }
  return affine(bind, p.global_out, stack(per_sample));
}

Var DynFormer::lgm(ParamBinder& bind, const LgmParams& p, Var v) {
  Var g = global_branch(bind, p, v);
  switch (cfg_.ablation.mixing) {
    case Mixing::kMixing: return hadamard(local_branch(bind, p, v), g);
    case Mixing::kAdding: return add(local_branch(bind, p, v), g);
    case Mixing::kGlobalOnly: return g;
  }
  return g;
}

Var DynFormer::fsdl(ParamBinder& bind, const FsdlParams& p, Var v) {
  Var lin = lgm(bind, p.linear.front(), v);
  for (std::size_t a = 1; a < p.linear.size(); ++a) lin = add(lin, lgm(bind, p.linear[a], v));
  Var nl = lgm(bind, p.nonlinear.front(), v);
  for (std::size_t b = 1; b < p.nonlinear.size(); ++b) nl = add(nl, lgm(bind, p.nonlinear[b], v));
  Var psi = affine(bind, p.psi_out, gelu(affine(bind, p.psi_in, nl)));
  return add(lin, psi);
}

Var DynFormer::evolve(ParamBinder& bind, Var v0) {
  switch (cfg_.ablation.flow) {
    case Flow::kHierarchical: {
      Var dt = bind(shared_dt_);
      Var v = v0;
      for (const FsdlParams& f : layers_) v = add(v, scale_by(fsdl(bind, f, v), dt));
      return v;
    }
    case Flow::kParallel: {
      Var total = fsdl(bind, layers_.front(), v0);
      for (std::size_t l = 1; l < layers_.size(); ++l) total = add(total, fsdl(bind, layers_[l], v0));
      return add(v0, scale_by(total, bind(shared_dt_)));
    }
    case Flow::kHybrid: {
      Var v = v0;
      for (const FsdlParams& f : layers_) v = add(v, scale_by(fsdl(bind, f, v), bind(f.dt)));
      return v;
    }
  }
  return v0;
}

Var DynFormer::forward(Tape& tape, Var u) {
  const Shape& s = u.shape();
  if (s.size() != 4 || s[3] != cfg_.d_in) {
    throw DimensionError("model input must be [B, N1, N2, " + std::to_string(cfg_.d_in) +
                         "], got " + to_string(s));
  }
  cfg_.modes.validate_for(s[1], s[2]);
  ParamBinder bind(tape);
  return project(bind, evolve(bind, lift(bind, u)));
}

Tensor DynFormer::predict(const Tensor& u) {
  Tape tape;
  return forward(tape, tape.constant(u)).value();
}

}  // namespace dynformer
