#include "soda/toy_dit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "soda/rng.hpp"

namespace soda::dit {

namespace {

constexpr double kNormEps = 1e-5;

double gelu(double x) {
    // tanh approximation; fully elementary arithmetic.
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

// y = x . W, W row-major [in][out].
void matvec(const double* x, const std::vector<double>& w, int in_dim, int out_dim, double* y) {
    for (int j = 0; j < out_dim; ++j) y[j] = 0.0;
    for (int k = 0; k < in_dim; ++k) {
        const double xv = x[k];
        const double* wrow = w.data() + static_cast<size_t>(k) * out_dim;
        for (int j = 0; j < out_dim; ++j) y[j] += xv * wrow[j];
    }
}

std::vector<double> seeded_uniform(Rng& rng, size_t count, double bound) {
    std::vector<double> out(count);
    for (size_t i = 0; i < count; ++i) out[i] = (2.0 * rng.next_unit() - 1.0) * bound;
    return out;
}

void require_weight_shape(const std::vector<double>& w, size_t expected, const char* name) {
    if (w.size() != expected)
        fail(ErrorCode::invalid_config,
             std::string("model weights: ") + name + " has wrong element count");
}

}  // namespace

// ============================================================================
// ToyDitConfig
// ============================================================================

void ToyDitConfig::validate() const {
    if (total_steps < 2) fail(ErrorCode::invalid_config, "total_steps must be >= 2");
    if (layers < 1) fail(ErrorCode::invalid_config, "layers must be >= 1");
    if (token_count < 2) fail(ErrorCode::invalid_config, "token_count must be >= 2");
    if (hidden_dim < 1) fail(ErrorCode::invalid_config, "hidden_dim must be >= 1");
    if (heads < 1) fail(ErrorCode::invalid_config, "heads must be >= 1");
    if (hidden_dim % heads != 0)
        fail(ErrorCode::invalid_config, "hidden_dim must be divisible by heads");
    if (!(beta_min > 0.0)) fail(ErrorCode::invalid_config, "beta_min must be > 0");
    if (!(beta_min <= beta_max)) fail(ErrorCode::invalid_config, "beta_min must be <= beta_max");
    if (!(beta_max < 1.0)) fail(ErrorCode::invalid_config, "beta_max must be < 1");
}

ToyDitConfig ToyDitConfig::from_json(const nlohmann::json& j) {
    static const char* known_keys[] = {"version",    "total_steps", "layers",
                                       "token_count", "hidden_dim",  "heads",
                                       "seed",       "beta_min",    "beta_max"};
    if (!j.is_object()) fail(ErrorCode::invalid_config, "config document must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : known_keys) known = known || (it.key() == k);
        if (!known) fail(ErrorCode::invalid_config, "config has unknown key: " + it.key());
    }
    for (const char* k : known_keys) {
        if (!j.contains(k))
            fail(ErrorCode::invalid_config, std::string("config is missing key: ") + k);
    }
    if (!j.at("version").is_number_integer() || j.at("version").get<int>() != kConfigFormatVersion)
        fail(ErrorCode::version_mismatch, "config version unsupported (expected 1)");

    ToyDitConfig c;
    try {
        c.total_steps = j.at("total_steps").get<int>();
        c.layers = j.at("layers").get<int>();
        c.token_count = j.at("token_count").get<int>();
        c.hidden_dim = j.at("hidden_dim").get<int>();
        c.heads = j.at("heads").get<int>();
        c.seed = j.at("seed").get<uint64_t>();
        c.beta_min = j.at("beta_min").get<double>();
        c.beta_max = j.at("beta_max").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::invalid_config, std::string("config field has wrong type: ") + e.what());
    }
    c.validate();
    return c;
}

ToyDitConfig ToyDitConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corruption, "config file is not valid JSON: " + std::string(e.what()));
    }
    return from_json(j);
}

nlohmann::json ToyDitConfig::to_json() const {
    return nlohmann::json{{"version", kConfigFormatVersion},
                          {"total_steps", total_steps},
                          {"layers", layers},
                          {"token_count", token_count},
                          {"hidden_dim", hidden_dim},
                          {"heads", heads},
                          {"seed", seed},
                          {"beta_min", beta_min},
                          {"beta_max", beta_max}};
}

// ============================================================================
// NoiseSchedule
// ============================================================================

NoiseSchedule NoiseSchedule::linear(const ToyDitConfig& config) {
    config.validate();
    const int T = config.total_steps;
    NoiseSchedule s;
    s.a.assign(static_cast<size_t>(T) + 1, 0.0);
    s.abar.assign(static_cast<size_t>(T) + 1, 0.0);
    double running = 1.0;
    for (int t = T; t >= 1; --t) {
        const double beta =
            config.beta_min + (config.beta_max - config.beta_min) *
                                  (static_cast<double>(T - t) / static_cast<double>(T - 1));
        s.a[static_cast<size_t>(t)] = 1.0 - beta;
        running *= s.a[static_cast<size_t>(t)];
        s.abar[static_cast<size_t>(t)] = running;
    }
    return s;
}

void NoiseSchedule::validate(int total_steps) const {
    if (static_cast<int>(a.size()) != total_steps + 1 ||
        static_cast<int>(abar.size()) != total_steps + 1)
        fail(ErrorCode::schedule, "noise schedule length does not match total_steps");
    double running = 1.0;
    for (int t = total_steps; t >= 1; --t) {
        const double at = a[static_cast<size_t>(t)];
        const double abart = abar[static_cast<size_t>(t)];
        if (!(at > 0.0 && at < 1.0)) fail(ErrorCode::schedule, "a_t must lie in (0,1)");
        if (!(abart > 0.0 && abart < 1.0)) fail(ErrorCode::schedule, "abar_t must lie in (0,1)");
        running *= at;
        if (running != abart)
            fail(ErrorCode::schedule, "abar_t is not the running product of a_t");
        if (t < total_steps && !(abar[static_cast<size_t>(t)] < abar[static_cast<size_t>(t + 1)]))
            fail(ErrorCode::schedule, "abar must be monotone across t");
    }
}

// ============================================================================
// ModuleKind / Trajectory
// ============================================================================

const char* module_kind_name(ModuleKind m) {
    return m == ModuleKind::att ? "ATT" : "MLP";
}

ModuleKind module_kind_from_name(const std::string& name) {
    if (name == "ATT") return ModuleKind::att;
    if (name == "MLP") return ModuleKind::mlp;
    fail(ErrorCode::invalid_argument, "unknown module kind: " + name);
}

const FeatureMap& Trajectory::output(const ToyDitConfig& config, int t, int l,
                                     ModuleKind m) const {
    if (!captured) fail(ErrorCode::missing_data, "trajectory was not captured");
    if (t < 1 || t > config.total_steps || l < 1 || l > config.layers)
        fail(ErrorCode::range, "module address out of range");
    return module_outputs[module_flat_index(config, t, l, m)];
}

// ============================================================================
// ToyModel
// ============================================================================

ToyModel::ToyModel(ToyDitConfig config, ModelWeights weights)
    : config_(config), schedule_(NoiseSchedule::linear(config)), weights_(std::move(weights)) {
    const size_t d = static_cast<size_t>(config_.hidden_dim);
    require_weight_shape(weights_.temb_proj, d * d, "temb_proj");
    require_weight_shape(weights_.out_proj, d * d, "out_proj");
    if (static_cast<int>(weights_.layers.size()) != config_.layers)
        fail(ErrorCode::invalid_config, "model weights: wrong layer count");
    for (const LayerWeights& lw : weights_.layers) {
        require_weight_shape(lw.att.scale_proj, d * d, "att.scale_proj");
        require_weight_shape(lw.att.shift_proj, d * d, "att.shift_proj");
        require_weight_shape(lw.att.wq, d * d, "att.wq");
        require_weight_shape(lw.att.wk, d * d, "att.wk");
        require_weight_shape(lw.att.wv, d * d, "att.wv");
        require_weight_shape(lw.att.wo, d * d, "att.wo");
        require_weight_shape(lw.mlp.scale_proj, d * d, "mlp.scale_proj");
        require_weight_shape(lw.mlp.shift_proj, d * d, "mlp.shift_proj");
        require_weight_shape(lw.mlp.w1, d * 4 * d, "mlp.w1");
        require_weight_shape(lw.mlp.w2, 4 * d * d, "mlp.w2");
    }

    // Fingerprint: config scalars + every weight in generation order.
    Sha256 h;
    h.update_string("soda-toy-dit-v1");
    h.update_u32(static_cast<uint32_t>(config_.total_steps));
    h.update_u32(static_cast<uint32_t>(config_.layers));
    h.update_u32(static_cast<uint32_t>(config_.token_count));
    h.update_u32(static_cast<uint32_t>(config_.hidden_dim));
    h.update_u32(static_cast<uint32_t>(config_.heads));
    h.update_u64(config_.seed);
    h.update_double(config_.beta_min);
    h.update_double(config_.beta_max);
    h.update_doubles(weights_.temb_proj);
    for (const LayerWeights& lw : weights_.layers) {
        h.update_doubles(lw.att.wq);
        h.update_doubles(lw.att.wk);
        h.update_doubles(lw.att.wv);
        h.update_doubles(lw.att.wo);
        h.update_doubles(lw.att.scale_proj);
        h.update_doubles(lw.att.shift_proj);
        h.update_doubles(lw.mlp.w1);
        h.update_doubles(lw.mlp.w2);
        h.update_doubles(lw.mlp.scale_proj);
        h.update_doubles(lw.mlp.shift_proj);
    }
    h.update_doubles(weights_.out_proj);
    fingerprint_ = h.finish();
}

ToyModel ToyModel::build(const ToyDitConfig& config) {
    config.validate();
    const size_t d = static_cast<size_t>(config.hidden_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
    Rng rng(stream_seed(config.seed, "model-weights"));

    // Generation order is part of the model definition; reordering would
    // change every fingerprint.
    ModelWeights w;
    w.temb_proj = seeded_uniform(rng, d * d, bound);
    w.layers.resize(static_cast<size_t>(config.layers));
    for (LayerWeights& lw : w.layers) {
        lw.att.wq = seeded_uniform(rng, d * d, bound);
        lw.att.wk = seeded_uniform(rng, d * d, bound);
        lw.att.wv = seeded_uniform(rng, d * d, bound);
        lw.att.wo = seeded_uniform(rng, d * d, bound);
        lw.att.scale_proj = seeded_uniform(rng, d * d, bound);
        lw.att.shift_proj = seeded_uniform(rng, d * d, bound);
        lw.mlp.w1 = seeded_uniform(rng, d * 4 * d, bound);
        lw.mlp.w2 = seeded_uniform(rng, 4 * d * d, bound);
        lw.mlp.scale_proj = seeded_uniform(rng, d * d, bound);
        lw.mlp.shift_proj = seeded_uniform(rng, d * d, bound);
    }
    w.out_proj = seeded_uniform(rng, d * d, bound);
    return ToyModel(config, std::move(w));
}

ToyModel ToyModel::from_weights(const ToyDitConfig& config, ModelWeights weights) {
    config.validate();
    return ToyModel(config, std::move(weights));
}

std::vector<double> ToyModel::condition(int t) const {
    if (t < 1 || t > config_.total_steps)
        fail(ErrorCode::range, "timestep out of range [1, T]: t=" + std::to_string(t));
    const int d = config_.hidden_dim;
    std::vector<double> emb = timestep_embedding(t, d);
    std::vector<double> cond(static_cast<size_t>(d));
    matvec(emb.data(), weights_.temb_proj, d, d, cond.data());
    return cond;
}

FeatureMap ToyModel::forward_module(int l, ModuleKind m, const FeatureMap& input,
                                    const std::vector<double>& cond,
                                    const std::vector<int>* kept, AttentionContext ctx) const {
    const int n_tok = config_.token_count;
    const int d = config_.hidden_dim;
    if (l < 1 || l > config_.layers) fail(ErrorCode::range, "layer index out of range");
    if (input.tokens != n_tok || input.dim != d)
        fail(ErrorCode::shape, "forward_module: input shape does not match config");
    if (static_cast<int>(cond.size()) != d)
        fail(ErrorCode::shape, "forward_module: conditioning vector has wrong length");

    std::vector<int> all_rows;
    const std::vector<int>* rows = kept;
    if (kept != nullptr) {
        if (kept->empty()) fail(ErrorCode::invalid_argument, "kept set must be nonempty");
        int prev = -1;
        for (int p : *kept) {
            if (p < 0 || p >= n_tok) fail(ErrorCode::invalid_argument, "kept position out of range");
            if (p <= prev)
                fail(ErrorCode::invalid_argument, "kept set must be strictly ascending");
            prev = p;
        }
    } else {
        all_rows.resize(static_cast<size_t>(n_tok));
        for (int i = 0; i < n_tok; ++i) all_rows[static_cast<size_t>(i)] = i;
        rows = &all_rows;
    }

    const ModuleWeights& mw =
        (m == ModuleKind::att) ? weights_.layers[static_cast<size_t>(l - 1)].att
                               : weights_.layers[static_cast<size_t>(l - 1)].mlp;

    // AdaLN: scale = 1 + cond . Ws, shift = cond . Wb, shared across tokens.
    std::vector<double> scale(static_cast<size_t>(d)), shift(static_cast<size_t>(d));
    matvec(cond.data(), mw.scale_proj, d, d, scale.data());
    matvec(cond.data(), mw.shift_proj, d, d, shift.data());
    for (int j = 0; j < d; ++j) scale[static_cast<size_t>(j)] += 1.0;

    auto modulate_row = [&](int r, double* out_row) {
        const double* x = input.row(r);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += x[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        for (int j = 0; j < d; ++j)
            out_row[j] = (x[j] - mean) * inv * scale[static_cast<size_t>(j)] +
                         shift[static_cast<size_t>(j)];
    };

    FeatureMap out(n_tok, d);

    if (m == ModuleKind::mlp) {
        const int hidden = 4 * d;
        std::vector<double> y(static_cast<size_t>(d)), h(static_cast<size_t>(hidden));
        for (int r : *rows) {
            modulate_row(r, y.data());
            matvec(y.data(), mw.w1, d, hidden, h.data());
            for (int j = 0; j < hidden; ++j) h[static_cast<size_t>(j)] = gelu(h[static_cast<size_t>(j)]);
            matvec(h.data(), mw.w2, hidden, d, out.row(r));
        }
        return out;
    }

    // Attention. Context rows are the kept rows by default; the research
    // variant keeps stale rows in the context.
    const std::vector<int>* context = rows;
    if (ctx == AttentionContext::full_input && kept != nullptr) {
        all_rows.resize(static_cast<size_t>(n_tok));
        for (int i = 0; i < n_tok; ++i) all_rows[static_cast<size_t>(i)] = i;
        context = &all_rows;
    }

    const int n_ctx = static_cast<int>(context->size());
    const int n_q = static_cast<int>(rows->size());
    const int heads = config_.heads;
    const int hd = d / heads;

    // Modulate + project the union of query and context rows.
    std::vector<double> y(static_cast<size_t>(d));
    FeatureMap q(n_q, d), k(n_ctx, d), v(n_ctx, d);
    std::vector<double> mod_ctx(static_cast<size_t>(n_ctx) * d);
    for (int i = 0; i < n_ctx; ++i) {
        modulate_row((*context)[static_cast<size_t>(i)], mod_ctx.data() + static_cast<size_t>(i) * d);
        matvec(mod_ctx.data() + static_cast<size_t>(i) * d, mw.wk, d, d, k.row(i));
        matvec(mod_ctx.data() + static_cast<size_t>(i) * d, mw.wv, d, d, v.row(i));
    }
    for (int i = 0; i < n_q; ++i) {
        const int r = (*rows)[static_cast<size_t>(i)];
        // Query rows are always part of the context in both modes; reuse the
        // modulated row when available to keep arithmetic identical.
        modulate_row(r, y.data());
        matvec(y.data(), mw.wq, d, d, q.row(i));
    }

    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> scores(static_cast<size_t>(n_ctx));
    std::vector<double> att(static_cast<size_t>(d));
    for (int i = 0; i < n_q; ++i) {
        const int r = (*rows)[static_cast<size_t>(i)];
        for (int j = 0; j < d; ++j) att[static_cast<size_t>(j)] = 0.0;
        for (int hidx = 0; hidx < heads; ++hidx) {
            const int off = hidx * hd;
            double mx = -1e300;
            for (int c = 0; c < n_ctx; ++c) {
                double s = 0.0;
                for (int j = 0; j < hd; ++j) s += q.at(i, off + j) * k.at(c, off + j);
                s *= inv_sqrt_hd;
                scores[static_cast<size_t>(c)] = s;
                mx = std::max(mx, s);
            }
            double denom = 0.0;
            for (int c = 0; c < n_ctx; ++c) {
                scores[static_cast<size_t>(c)] = std::exp(scores[static_cast<size_t>(c)] - mx);
                denom += scores[static_cast<size_t>(c)];
            }
            for (int c = 0; c < n_ctx; ++c) {
                const double wgt = scores[static_cast<size_t>(c)] / denom;
                for (int j = 0; j < hd; ++j) att[static_cast<size_t>(off + j)] += wgt * v.at(c, off + j);
            }
        }
        matvec(att.data(), mw.wo, d, d, out.row(r));
    }
    return out;
}

FeatureMap ToyModel::predict_noise(const FeatureMap& stream) const {
    const int d = config_.hidden_dim;
    if (stream.tokens != config_.token_count || stream.dim != d)
        fail(ErrorCode::shape, "predict_noise: stream shape does not match config");
    FeatureMap eps(stream.tokens, d);
    for (int r = 0; r < stream.tokens; ++r) matvec(stream.row(r), weights_.out_proj, d, d, eps.row(r));
    return eps;
}

FeatureMap ToyModel::denoise_update(const FeatureMap& x_t, const FeatureMap& eps, int t) const {
    return dit::denoise_update(x_t, eps, t, schedule_);
}

Trajectory ToyModel::run_full_trajectory(const FeatureMap& x_T, bool capture) const {
    const int T = config_.total_steps;
    if (x_T.tokens != config_.token_count || x_T.dim != config_.hidden_dim)
        fail(ErrorCode::shape, "run_full_trajectory: x_T shape does not match config");
    if (!x_T.all_finite())
        fail(ErrorCode::invalid_argument, "run_full_trajectory: x_T contains non-finite values");

    Trajectory traj;
    traj.states.resize(static_cast<size_t>(T) + 1);
    traj.states[static_cast<size_t>(T)] = x_T;
    traj.captured = capture;
    if (capture)
        traj.module_outputs.resize(static_cast<size_t>(T) * config_.layers * kModuleKinds);

    for (int t = T; t >= 1; --t) {
        const std::vector<double> cond = condition(t);
        FeatureMap stream = traj.states[static_cast<size_t>(t)];
        for (int l = 1; l <= config_.layers; ++l) {
            for (ModuleKind m : {ModuleKind::att, ModuleKind::mlp}) {
                FeatureMap branch = forward_module(l, m, stream, cond);
                if (capture)
                    traj.module_outputs[module_flat_index(config_, t, l, m)] = branch;
                stream.add_inplace(branch);
            }
        }
        if (!stream.all_finite())
            fail(ErrorCode::numeric_overflow,
                 "non-finite activations at step " + std::to_string(t));
        const FeatureMap eps = predict_noise(stream);
        traj.states[static_cast<size_t>(t - 1)] =
            dit::denoise_update(traj.states[static_cast<size_t>(t)], eps, t, schedule_);
        if (!traj.states[static_cast<size_t>(t - 1)].all_finite())
            fail(ErrorCode::numeric_overflow,
                 "non-finite state produced at step " + std::to_string(t));
    }
    return traj;
}

// ============================================================================
// Free operations
// ============================================================================

std::vector<double> timestep_embedding(int t, int d) {
    if (t < 1) fail(ErrorCode::range, "timestep_embedding: t must be >= 1");
    if (d < 1) fail(ErrorCode::range, "timestep_embedding: d must be >= 1");
    std::vector<double> emb(static_cast<size_t>(d), 0.0);
    const int half = d / 2;
    for (int i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * (half > 1 ? static_cast<double>(i) / (half - 1) : 0.0));
        emb[static_cast<size_t>(2 * i)] = std::sin(t * freq);
        emb[static_cast<size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    // Odd d leaves the last entry zero.
    return emb;
}

FeatureMap denoise_update(const FeatureMap& x_t, const FeatureMap& eps, int t,
                          const NoiseSchedule& sched) {
    require_same_shape(x_t, eps, "denoise_update");
    if (t < 1 || t >= static_cast<int>(sched.a.size()))
        fail(ErrorCode::range, "denoise_update: timestep out of schedule range");
    const double a_t = sched.a[static_cast<size_t>(t)];
    const double abar_t = sched.abar[static_cast<size_t>(t)];
    if (!(1.0 - abar_t > 0.0))
        fail(ErrorCode::schedule, "denoise_update: abar_t == 1 makes the eps coefficient singular");
    const double inv_sqrt_a = 1.0 / std::sqrt(a_t);
    const double coeff = (1.0 - a_t) / std::sqrt(1.0 - abar_t);
    FeatureMap out(x_t.tokens, x_t.dim);
    for (size_t i = 0; i < x_t.data.size(); ++i)
        out.data[i] = inv_sqrt_a * (x_t.data[i] - coeff * eps.data[i]);
    return out;
}

FeatureMap gaussian_feature_map(int tokens, int dim, uint64_t seed) {
    FeatureMap out(tokens, dim);
    Rng rng(seed);
    for (double& v : out.data) v = rng.next_gaussian();
    return out;
}

}  // namespace soda::dit
