#include "kecrs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "kecrs/errors.hpp"

namespace kecrs {

namespace {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("config", 1, "expected a JSON object");
    TrainConfig c;
    const nlohmann::json known = c.to_json();
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ParseError("config", 1, "unknown key '" + key + "'");
    }
    try {
        take(j, "lr_rec", c.lr_rec);
        take(j, "lr_gen", c.lr_gen);
        take(j, "batch_rec", c.batch_rec);
        take(j, "batch_gen", c.batch_gen);
        take(j, "beta1", c.beta1);
        take(j, "beta2", c.beta2);
        take(j, "eps", c.eps);
        take(j, "clip_threshold", c.clip_threshold);
        take(j, "l2_coeff", c.l2_coeff);
        take(j, "lambda1", c.lambda1);
        take(j, "lambda2", c.lambda2);
        take(j, "lambda3", c.lambda3);
        take(j, "epochs", c.epochs);
        take(j, "patience", c.patience);
        take(j, "seed", c.seed);
        take(j, "d_k", c.d_k);
        take(j, "d_f", c.d_f);
        take(j, "rgcn_layers", c.rgcn_layers);
        take(j, "d_model", c.d_model);
        take(j, "heads", c.heads);
        take(j, "enc_layers", c.enc_layers);
        take(j, "dec_layers", c.dec_layers);
        take(j, "max_context", c.max_context);
        take(j, "max_response", c.max_response);
        take(j, "min_freq", c.min_freq);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config", 1, e.what());
    }
    if (c.lr_rec < 0 || c.lr_gen < 0 || c.batch_rec < 1 || c.batch_gen < 1 || c.clip_threshold <= 0 ||
        c.lambda1 < 0 || c.lambda2 < 0 || c.lambda3 < 0 || c.epochs < 0 || c.patience < 0) {
        throw ParseError("config", 1, "value out of range");
    }
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string(), 1, e.what());
    }
    return from_json(j);
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lr_rec", lr_rec},
            {"lr_gen", lr_gen},
            {"batch_rec", batch_rec},
            {"batch_gen", batch_gen},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"clip_threshold", clip_threshold},
            {"l2_coeff", l2_coeff},
            {"lambda1", lambda1},
            {"lambda2", lambda2},
            {"lambda3", lambda3},
            {"epochs", epochs},
            {"patience", patience},
            {"seed", seed},
            {"d_k", d_k},
            {"d_f", d_f},
            {"rgcn_layers", rgcn_layers},
            {"d_model", d_model},
            {"heads", heads},
            {"enc_layers", enc_layers},
            {"dec_layers", dec_layers},
            {"max_context", max_context},
            {"max_response", max_response},
            {"min_freq", min_freq}};
}

// ---------------------------------------------------------------------------

// "Gradients within [0, 0.1]" is a bound on the gradient norm; a signed clamp
// would discard every negative component.
StepReport clip_and_step(ParamStore& params, AdamState& state, const OptimizerSettings& opt) {
    const std::size_t n = params.size();
    if (state.m.size() != n) {
        state.m.assign(n, Matrix());
        state.v.assign(n, Matrix());
        for (std::size_t i = 0; i < n; ++i) {
            state.m[i] = Matrix::Zero(params[i].value.rows(), params[i].value.cols());
            state.v[i] = state.m[i];
        }
    }
    std::vector<Matrix> grads(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Parameter& p = params[i];
        if (!p.trainable) continue;
        Matrix g = p.grad.size() == 0 ? Matrix::Zero(p.value.rows(), p.value.cols()) : p.grad;
        if (!g.allFinite()) throw NumericalError("non-finite gradient in tensor '" + p.name + "'");
        if (opt.l2_coeff != 0.0) g += opt.l2_coeff * p.value;
        sq += g.squaredNorm();
        grads[i] = std::move(g);
    }
    StepReport report;
    report.grad_norm = std::sqrt(sq);
    const double factor = report.grad_norm > opt.clip_threshold ? opt.clip_threshold / report.grad_norm : 1.0;
    report.clipped_norm = report.grad_norm * factor;

    ++state.step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < n; ++i) {
        Parameter& p = params[i];
        if (!p.trainable) continue;
        const Matrix g = grads[i] * factor;
        state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
        state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g.cwiseProduct(g);
        const Matrix m_hat = state.m[i] / c1;
        const Matrix v_hat = state.v[i] / c2;
        p.value.array() -= opt.lr * m_hat.array() / (v_hat.array().sqrt() + opt.eps);
    }
    return report;
}

// ---------------------------------------------------------------------------

FdReport finite_difference_check(ParamStore& params, const LossFn& loss, const FdOptions& opt) {
    params.zero_grad();
    loss(true);
    std::vector<Matrix> analytic(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter& p = params[i];
        analytic[i] = p.grad.size() == 0 ? Matrix::Zero(p.value.rows(), p.value.cols()) : p.grad;
    }

    ad::ReluMonitor& mon = ad::relu_monitor();
    const bool was_active = mon.active;
    mon.active = true;
    auto probe = [&](Parameter& p, Eigen::Index k, double delta, std::uint64_t& signature) {
        const double saved = p.value(k);
        p.value(k) = saved + delta;
        mon.reset();
        const double f = loss(false);
        signature = mon.signature;
        p.value(k) = saved;
        return f;
    };

    Rng rng(opt.seed);
    FdReport report;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        if (!p.trainable || p.value.size() == 0) continue;
        const auto size = static_cast<std::size_t>(p.value.size());
        std::vector<Eigen::Index> coords(size);
        std::iota(coords.begin(), coords.end(), Eigen::Index{0});
        if (size > opt.coords_per_tensor) {
            rng.shuffle(std::span<Eigen::Index>(coords));
            coords.resize(opt.coords_per_tensor);
        }
        FdTensorReport t;
        t.name = p.name;
        double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
        for (Eigen::Index k : coords) {
            std::uint64_t sig_plus = 0, sig_minus = 0;
            const double fp = probe(p, k, opt.step, sig_plus);
            const double fm = probe(p, k, -opt.step, sig_minus);
            if (sig_plus != sig_minus) {
                ++t.skipped;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * opt.step);
            const double a = analytic[i](k);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            t.max_rel_error = std::max(t.max_rel_error, rel);
            diff_sq += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
            ++t.checked;
        }
        t.norm_rel_error = std::sqrt(diff_sq) / std::max({std::sqrt(a_sq), std::sqrt(n_sq), 1e-8});
        report.max_rel_error = std::max(report.max_rel_error, t.max_rel_error);
        report.tensors.push_back(std::move(t));
    }
    mon.active = was_active;
    params.zero_grad();
    return report;
}

// ---------------------------------------------------------------------------

TrainResult train_loop(const TrainTask& task, const TrainLoopConfig& cfg) {
    if (task.params == nullptr || !task.batch_loss) throw LookupError("train_loop: incomplete task");
    if (task.num_examples == 0) throw EmptyInput("train_loop: no training examples");
    ParamStore& params = *task.params;
    TrainResult result;
    AdamState adam;
    Rng rng = Rng::derive(cfg.seed, 3);
    std::vector<std::size_t> order(task.num_examples);
    std::iota(order.begin(), order.end(), std::size_t{0});

    ParamStore best = params;
    double best_score = std::numeric_limits<double>::infinity();
    int since_best = 0;
    const auto batch = static_cast<std::size_t>(std::max(cfg.batch_size, 1));

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        ParamStore last_good = params;
        rng.shuffle(std::span<std::size_t>(order));
        double sum = 0.0;
        int counted = 0;
        bool diverged = false;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            params.zero_grad();
            std::optional<double> loss;
            try {
                loss = task.batch_loss(std::span<const std::size_t>(order).subspan(start, end - start));
            } catch (const NumericalError& e) {
                result.divergence = std::string(e.what()) + " in epoch " + std::to_string(epoch);
                diverged = true;
                break;
            }
            if (!loss) continue;
            if (!std::isfinite(*loss)) {
                result.divergence = "non-finite training loss in epoch " + std::to_string(epoch);
                diverged = true;
                break;
            }
            try {
                clip_and_step(params, adam, cfg.optimizer);
            } catch (const NumericalError& e) {
                result.divergence = std::string(e.what()) + " in epoch " + std::to_string(epoch);
                diverged = true;
                break;
            }
            sum += *loss;
            ++counted;
        }
        params.zero_grad();
        if (diverged) {
            params.assign_values(last_good);
            result.diverged = true;
            return result;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = counted > 0 ? sum / counted : std::numeric_limits<double>::quiet_NaN();
        rec.val_loss = std::numeric_limits<double>::quiet_NaN();
        if (task.validation_loss) {
            try {
                if (auto v = task.validation_loss()) rec.val_loss = *v;
            } catch (const NumericalError&) {
                rec.val_loss = std::numeric_limits<double>::infinity();
            }
        }
        result.curve.push_back(rec);
        const double score = std::isnan(rec.val_loss) ? rec.train_loss : rec.val_loss;
        if (!std::isfinite(score)) {
            if (std::isnan(score) && counted == 0) continue;
            params.assign_values(last_good);
            result.diverged = true;
            result.divergence = "non-finite loss after epoch " + std::to_string(epoch);
            return result;
        }
        if (score < best_score) {
            best_score = score;
            best.assign_values(params);
            result.best_epoch = epoch;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            break;
        }
    }
    if (result.best_epoch > 0) params.assign_values(best);
    return result;
}

void write_loss_curve(const std::filesystem::path& path, std::span<const EpochRecord> curve) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path.string());
    out << "epoch,train_loss,val_loss\n" << std::setprecision(17);
    for (const auto& r : curve) {
        out << r.epoch << ',' << r.train_loss << ',';
        if (!std::isnan(r.val_loss)) out << r.val_loss;
        out << '\n';
    }
}

}  // namespace kecrs
