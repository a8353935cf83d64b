#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "soda/digest.hpp"
#include "soda/feature_map.hpp"

namespace soda::dit {

// ============================================================================
// Configuration
// ============================================================================

inline constexpr int kConfigFormatVersion = 1;

struct ToyDitConfig {
    int total_steps = 50;   // T; denoising runs t = T down to 1
    int layers = 4;         // L
    int token_count = 16;   // flat token sequence length
    int hidden_dim = 32;    // d, multiple of heads
    int heads = 4;
    uint64_t seed = 0;
    // Linear variance schedule endpoints. The steep ramp gives the trajectory
    // strongly timestep-dependent drift, which is what makes the sensitivity
    // grids structured rather than flat at this scale.
    double beta_min = 1e-4;
    double beta_max = 2e-1;

    void validate() const;

    static ToyDitConfig from_json(const nlohmann::json& j);
    static ToyDitConfig from_json_file(const std::string& path);
    nlohmann::json to_json() const;

    bool operator==(const ToyDitConfig&) const = default;
};

// ============================================================================
// Noise schedule
// ============================================================================

struct NoiseSchedule {
    // Index by timestep, entry 0 unused. abar[t] = a[t] * abar[t+1] with
    // abar[T+1] == 1, accumulated from t = T down to 1.
    std::vector<double> a;
    std::vector<double> abar;

    static NoiseSchedule linear(const ToyDitConfig& config);
    void validate(int total_steps) const;
};

// ============================================================================
// Module addressing
// ============================================================================

enum class ModuleKind : int { att = 0, mlp = 1 };
inline constexpr int kModuleKinds = 2;

const char* module_kind_name(ModuleKind m);
ModuleKind module_kind_from_name(const std::string& name);

struct ModuleAddress {
    int t = 0;
    int l = 0;
    ModuleKind m = ModuleKind::att;
};

// Flat index over (t, l, m), t-major; t in [1, T], l in [1, L].
inline size_t module_flat_index(const ToyDitConfig& config, int t, int l, ModuleKind m) {
    return (static_cast<size_t>(t - 1) * config.layers + static_cast<size_t>(l - 1)) *
               kModuleKinds +
           static_cast<size_t>(m);
}

// ============================================================================
// Trajectory
// ============================================================================

struct Trajectory {
    // states[t] = x_t for t in [0, T]; states[T] is the initial noise.
    std::vector<FeatureMap> states;
    bool captured = false;
    // Residual-branch outputs, indexed by module_flat_index; only filled when
    // the run was captured.
    std::vector<FeatureMap> module_outputs;

    const FeatureMap& output(const ToyDitConfig& config, int t, int l, ModuleKind m) const;
};

// ============================================================================
// Model
// ============================================================================

// All projections are row-major [in][out]; y = x . W.
struct ModuleWeights {
    std::vector<double> scale_proj;  // d x d, AdaLN scale = 1 + cond . W
    std::vector<double> shift_proj;  // d x d
    // attention only
    std::vector<double> wq, wk, wv, wo;  // d x d each
    // mlp only
    std::vector<double> w1;  // d x 4d
    std::vector<double> w2;  // 4d x d
};

struct LayerWeights {
    ModuleWeights att;
    ModuleWeights mlp;
};

struct ModelWeights {
    std::vector<double> temb_proj;  // d x d, applied to the sinusoidal embedding
    std::vector<LayerWeights> layers;
    std::vector<double> out_proj;  // d x d, final noise projection
};

enum class AttentionContext {
    kept_only,   // keys/values restricted to the kept set (default)
    full_input,  // research flag: stale rows stay in the context
};

class ToyModel {
public:
    // Seeded deterministic weights, uniform in [-1/sqrt(d), 1/sqrt(d)].
    static ToyModel build(const ToyDitConfig& config);
    // Explicit weights (test forgeries, external loads). Shapes are validated.
    static ToyModel from_weights(const ToyDitConfig& config, ModelWeights weights);

    const ToyDitConfig& config() const { return config_; }
    const NoiseSchedule& noise_schedule() const { return schedule_; }
    const ModelWeights& weights() const { return weights_; }
    const Digest& fingerprint() const { return fingerprint_; }

    // Projected sinusoidal timestep embedding, length d. Range-checked
    // against [1, T].
    std::vector<double> condition(int t) const;

    // Residual-branch output of one module: AdaLN (per-token normalize, then
    // timestep-conditioned scale/shift) followed by the module body, BEFORE
    // the residual addition. With `kept` given, only kept rows are computed
    // (others are zero and the caller substitutes them); attention restricts
    // its context to the kept rows unless `ctx` says otherwise.
    FeatureMap forward_module(int l, ModuleKind m, const FeatureMap& input,
                              const std::vector<double>& cond,
                              const std::vector<int>* kept = nullptr,
                              AttentionContext ctx = AttentionContext::kept_only) const;

    // Final projection of the residual stream to the noise estimate.
    FeatureMap predict_noise(const FeatureMap& stream) const;

    FeatureMap denoise_update(const FeatureMap& x_t, const FeatureMap& eps, int t) const;

    Trajectory run_full_trajectory(const FeatureMap& x_T, bool capture) const;

private:
    ToyModel(ToyDitConfig config, ModelWeights weights);

    ToyDitConfig config_;
    NoiseSchedule schedule_;
    ModelWeights weights_;
    Digest fingerprint_;
};

// ============================================================================
// Free operations
// ============================================================================

// Standard sinusoidal embedding; entries in [-1, 1]. t must be >= 1.
std::vector<double> timestep_embedding(int t, int d);

// x_{t-1} = (1/sqrt(a_t)) * (x_t - ((1 - a_t)/sqrt(1 - abar_t)) * eps)
FeatureMap denoise_update(const FeatureMap& x_t, const FeatureMap& eps, int t,
                          const NoiseSchedule& sched);

// Seeded standard-normal initial state.
FeatureMap gaussian_feature_map(int tokens, int dim, uint64_t seed);

}  // namespace soda::dit
