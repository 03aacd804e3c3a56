#include "epf/dnn.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "epf/error.hpp"
#include "epf/parallel.hpp"

namespace epf::dnn {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using MatMap = Eigen::Map<MatrixXd>;
using ConstMatMap = Eigen::Map<const MatrixXd>;
using ConstVecMap = Eigen::Map<const VectorXd>;

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
    }
    return v;
}

int parse_int(const std::string& key, const std::string& text) {
    int v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ConfigError("'" + key + "' expects an integer, got '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("'" + key + "' expects true or false, got '" + text + "'");
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

MatrixXd activate(Activation a, const MatrixXd& u) {
    switch (a) {
        case Activation::relu:
            return u.cwiseMax(0.0);
        case Activation::tanh:
            return u.array().tanh().matrix();
        case Activation::sigmoid:
            return (1.0 / (1.0 + (-u.array()).exp())).matrix();
        case Activation::softplus:
            return (u.array().max(0.0) + (-u.array().abs()).exp().log1p()).matrix();
        case Activation::leaky_relu:
            return u.unaryExpr([](double x) { return x > 0.0 ? x : kLeakySlope * x; });
        case Activation::linear:
            return u;
    }
    return u;
}

// Derivative with respect to the pre-activation, given input u and output h.
MatrixXd activation_slope(Activation a, const MatrixXd& u, const MatrixXd& h) {
    switch (a) {
        case Activation::relu:
            return u.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
        case Activation::tanh:
            return (1.0 - h.array().square()).matrix();
        case Activation::sigmoid:
            return (h.array() * (1.0 - h.array())).matrix();
        case Activation::softplus:
            return (1.0 / (1.0 + (-u.array()).exp())).matrix();
        case Activation::leaky_relu:
            return u.unaryExpr([](double x) { return x > 0.0 ? 1.0 : kLeakySlope; });
        case Activation::linear:
            return MatrixXd::Ones(u.rows(), u.cols());
    }
    return MatrixXd::Ones(u.rows(), u.cols());
}

double sign(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

struct LayerCache {
    MatrixXd input;  // activations feeding the layer
    MatrixXd z;      // affine output
    MatrixXd xhat;   // normalized z (batch norm only)
    VectorXd invstd;
    VectorXd batch_mean;
    VectorXd batch_var;
    MatrixXd u;  // activation input
    MatrixXd h;  // activation output
};

struct ForwardCache {
    LayerCache hidden[2];
    MatrixXd last_input;
    MatrixXd out;
};

struct HiddenRef {
    Index w, b, g, beta, fan_in, fan_out;
};

std::array<HiddenRef, 2> hidden_refs(const DnnModel& m) {
    const ParamLayout L = m.layout();
    return {{{L.w1, L.b1, L.g1, L.beta1, m.input_dim, m.hp.n1},
             {L.w2, L.b2, L.g2, L.beta2, m.hp.n1, m.hp.n2}}};
}

// Training-mode forward pass with batch statistics.
void forward_train(const DnnModel& m, const MatrixXd& X, const DropoutMasks* masks,
                   ForwardCache& cache) {
    const auto refs = hidden_refs(m);
    const VectorXd& p = m.params;
    MatrixXd a = X;
    for (int l = 0; l < 2; ++l) {
        const auto& r = refs[static_cast<std::size_t>(l)];
        auto& c = cache.hidden[l];
        const ConstMatMap W(p.data() + r.w, r.fan_in, r.fan_out);
        const ConstVecMap b(p.data() + r.b, r.fan_out);
        c.input = std::move(a);
        c.z = (c.input * W).rowwise() + b.transpose();
        if (m.hp.batch_norm) {
            const ConstVecMap gamma(p.data() + r.g, r.fan_out);
            const ConstVecMap beta(p.data() + r.beta, r.fan_out);
            c.batch_mean = c.z.colwise().mean().transpose();
            const MatrixXd centered = c.z.rowwise() - c.batch_mean.transpose();
            c.batch_var = centered.array().square().colwise().mean().transpose();
            c.invstd = (c.batch_var.array() + m.bn_epsilon).rsqrt().matrix();
            c.xhat = centered * c.invstd.asDiagonal();
            c.u = (c.xhat * gamma.asDiagonal()).rowwise() + beta.transpose();
        } else {
            c.u = c.z;
        }
        c.h = activate(m.hp.activation, c.u);
        a = c.h;
        if (masks) {
            a = a.cwiseProduct(l == 0 ? masks->m1 : masks->m2);
        }
    }
    const ParamLayout L = m.layout();
    const ConstMatMap W3(p.data() + L.w3, m.hp.n2, kOutputs);
    const ConstVecMap b3(p.data() + L.b3, kOutputs);
    cache.last_input = std::move(a);
    cache.out = (cache.last_input * W3).rowwise() + b3.transpose();
}

double kernel_l1(const DnnModel& m) {
    const ParamLayout L = m.layout();
    const VectorXd& p = m.params;
    return p.segment(L.w1, L.b1 - L.w1).lpNorm<1>() + p.segment(L.w2, L.b2 - L.w2).lpNorm<1>() +
           p.segment(L.w3, L.b3 - L.w3).lpNorm<1>();
}

LossGradient loss_and_gradient_impl(const DnnModel& m, const MatrixXd& X, const MatrixXd& Y,
                                    const DropoutMasks* masks, ForwardCache& cache) {
    forward_train(m, X, masks, cache);
    const double cells = static_cast<double>(Y.rows() * Y.cols());
    const MatrixXd resid = cache.out - Y;
    LossGradient lg;
    lg.loss = resid.cwiseAbs().sum() / cells + m.hp.l1 * kernel_l1(m);
    lg.gradient = VectorXd::Zero(m.params.size());

    const ParamLayout L = m.layout();
    const VectorXd& p = m.params;
    VectorXd& g = lg.gradient;
    const double l1 = m.hp.l1;

    MatrixXd d_out = resid.unaryExpr([](double x) { return sign(x); }) / cells;
    {
        const ConstMatMap W3(p.data() + L.w3, m.hp.n2, kOutputs);
        MatMap gW3(g.data() + L.w3, m.hp.n2, kOutputs);
        gW3 = cache.last_input.transpose() * d_out + l1 * W3.unaryExpr([](double x) { return sign(x); });
        g.segment(L.b3, kOutputs) = d_out.colwise().sum().transpose();
        d_out = d_out * W3.transpose();  // now dA for hidden layer 2
    }
    MatrixXd dA = std::move(d_out);
    const auto refs = hidden_refs(m);
    for (int l = 1; l >= 0; --l) {
        const auto& r = refs[static_cast<std::size_t>(l)];
        const auto& c = cache.hidden[l];
        MatrixXd dH = masks ? dA.cwiseProduct(l == 0 ? masks->m1 : masks->m2) : dA;
        MatrixXd dU = dH.cwiseProduct(activation_slope(m.hp.activation, c.u, c.h));
        MatrixXd dZ;
        if (m.hp.batch_norm) {
            const ConstVecMap gamma(p.data() + r.g, r.fan_out);
            g.segment(r.g, r.fan_out) = dU.cwiseProduct(c.xhat).colwise().sum().transpose();
            g.segment(r.beta, r.fan_out) = dU.colwise().sum().transpose();
            const MatrixXd dXhat = dU * gamma.asDiagonal();
            const double B = static_cast<double>(X.rows());
            const Eigen::RowVectorXd sum_dx = dXhat.colwise().sum();
            const Eigen::RowVectorXd sum_dx_xhat = dXhat.cwiseProduct(c.xhat).colwise().sum();
            dZ = ((B * dXhat).rowwise() - sum_dx - c.xhat * sum_dx_xhat.asDiagonal()) *
                 (c.invstd / B).asDiagonal();
        } else {
            dZ = std::move(dU);
        }
        const ConstMatMap W(p.data() + r.w, r.fan_in, r.fan_out);
        MatMap gW(g.data() + r.w, r.fan_in, r.fan_out);
        gW = c.input.transpose() * dZ + l1 * W.unaryExpr([](double x) { return sign(x); });
        g.segment(r.b, r.fan_out) = dZ.colwise().sum().transpose();
        if (l > 0) {
            dA = dZ * W.transpose();
        }
    }
    return lg;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

MatrixXd dropout_mask(std::mt19937_64& rng, Index rows, Index cols, double rate) {
    const double keep = 1.0 - rate;
    std::bernoulli_distribution bern(keep);
    MatrixXd m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = bern(rng) ? 1.0 / keep : 0.0;
    }
    return m;
}

nlohmann::json vec_json(const VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

VectorXd json_vec(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return ConstVecMap(values.data(), static_cast<Index>(values.size()));
}

std::vector<bool> weekday_passthrough(const features::FeatureMask& mask) {
    std::vector<bool> pass(mask.row_length(), false);
    if (mask.use_weekday()) pass.back() = true;
    return pass;
}

MatrixXd price_rows(const data::HistoryView& view, const std::vector<std::size_t>& days) {
    MatrixXd Y(static_cast<Index>(days.size()), kOutputs);
    for (std::size_t i = 0; i < days.size(); ++i) {
        const auto v = view.day(data::Series::price, days[i]);
        for (int h = 0; h < kOutputs; ++h) Y(static_cast<Index>(i), h) = v[static_cast<std::size_t>(h)];
    }
    return Y;
}

}  // namespace

Activation parse_activation(const std::string& name) {
    for (Activation a : {Activation::relu, Activation::tanh, Activation::sigmoid,
                         Activation::softplus, Activation::leaky_relu, Activation::linear}) {
        if (to_string(a) == name) return a;
    }
    throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::softplus: return "softplus";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::linear: return "linear";
    }
    return "relu";
}

Init parse_init(const std::string& name) {
    for (Init i : {Init::glorot_uniform, Init::he_uniform, Init::lecun_uniform, Init::zeros}) {
        if (to_string(i) == name) return i;
    }
    throw ConfigError("unknown weight init '" + name + "'");
}

std::string to_string(Init init) {
    switch (init) {
        case Init::glorot_uniform: return "glorot_uniform";
        case Init::he_uniform: return "he_uniform";
        case Init::lecun_uniform: return "lecun_uniform";
        case Init::zeros: return "zeros";
    }
    return "glorot_uniform";
}

void DnnHyperparams::validate() const {
    if (n1 < 1 || n2 < 1) throw ConfigError("hidden layer sizes must be at least 1");
    if (!(dropout >= 0.0 && dropout <= 0.5)) throw ConfigError("dropout must lie in [0, 0.5]");
    if (!(learning_rate >= 1e-5 && learning_rate <= 1e-1)) {
        throw ConfigError("learning rate must lie in [1e-5, 1e-1]");
    }
    if (!(l1 >= 0.0)) throw ConfigError("l1 coefficient must be non-negative");
    if (!mask.any()) throw FeatureError("feature mask selects no inputs");
}

std::map<std::string, std::string> to_key_values(const DnnHyperparams& hp) {
    return {
        {"n1", std::to_string(hp.n1)},
        {"n2", std::to_string(hp.n2)},
        {"activation", to_string(hp.activation)},
        {"dropout", format_double(hp.dropout)},
        {"learning_rate", format_double(hp.learning_rate)},
        {"batch_norm", hp.batch_norm ? "true" : "false"},
        {"scaler", transform::to_string(hp.scaler)},
        {"init", to_string(hp.init)},
        {"l1", format_double(hp.l1)},
        {"features", hp.mask.to_string()},
    };
}

DnnHyperparams hyperparams_from_key_values(const std::map<std::string, std::string>& values) {
    DnnHyperparams hp;
    for (const auto& [key, value] : values) {
        if (key == "n1") hp.n1 = parse_int(key, value);
        else if (key == "n2") hp.n2 = parse_int(key, value);
        else if (key == "activation") hp.activation = parse_activation(value);
        else if (key == "dropout") hp.dropout = parse_double(key, value);
        else if (key == "learning_rate") hp.learning_rate = parse_double(key, value);
        else if (key == "batch_norm") hp.batch_norm = parse_bool(key, value);
        else if (key == "scaler") hp.scaler = transform::parse_scaler_kind(value);
        else if (key == "init") hp.init = parse_init(value);
        else if (key == "l1") hp.l1 = parse_double(key, value);
        else if (key == "features") hp.mask = features::FeatureMask::from_string(value);
    }
    return hp;
}

ParamLayout DnnModel::layout() const {
    const Index in = input_dim;
    const Index n1 = hp.n1;
    const Index n2 = hp.n2;
    const Index bn1 = hp.batch_norm ? n1 : 0;
    const Index bn2 = hp.batch_norm ? n2 : 0;
    ParamLayout L{};
    L.w1 = 0;
    L.b1 = L.w1 + in * n1;
    L.g1 = L.b1 + n1;
    L.beta1 = L.g1 + bn1;
    L.w2 = L.beta1 + bn1;
    L.b2 = L.w2 + n1 * n2;
    L.g2 = L.b2 + n2;
    L.beta2 = L.g2 + bn2;
    L.w3 = L.beta2 + bn2;
    L.b3 = L.w3 + n2 * kOutputs;
    L.size = L.b3 + kOutputs;
    return L;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

DnnModel build_network(const DnnHyperparams& hp, int input_dim, std::uint64_t seed) {
    hp.validate();
    if (input_dim != static_cast<int>(hp.mask.row_length())) {
        throw ConfigError("input dimension " + std::to_string(input_dim) +
                          " does not match the feature mask (" +
                          std::to_string(hp.mask.row_length()) + ")");
    }
    DnnModel m;
    m.hp = hp;
    m.input_dim = input_dim;
    m.seed = seed;
    const ParamLayout L = m.layout();
    m.params = VectorXd::Zero(L.size);
    std::mt19937_64 rng(derive_seed(seed, 0));
    auto fill = [&](Index offset, Index fan_in, Index fan_out) {
        double limit = 0.0;
        switch (hp.init) {
            case Init::glorot_uniform:
                limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
                break;
            case Init::he_uniform:
                limit = std::sqrt(6.0 / static_cast<double>(fan_in));
                break;
            case Init::lecun_uniform:
                limit = std::sqrt(3.0 / static_cast<double>(fan_in));
                break;
            case Init::zeros:
                return;
        }
        for (Index i = 0; i < fan_in * fan_out; ++i) {
            m.params(offset + i) = uniform(rng, -limit, limit);
        }
    };
    fill(L.w1, input_dim, hp.n1);
    fill(L.w2, hp.n1, hp.n2);
    fill(L.w3, hp.n2, kOutputs);
    if (hp.batch_norm) {
        m.params.segment(L.g1, hp.n1).setOnes();
        m.params.segment(L.g2, hp.n2).setOnes();
    }
    m.mean1 = VectorXd::Zero(hp.n1);
    m.var1 = VectorXd::Ones(hp.n1);
    m.mean2 = VectorXd::Zero(hp.n2);
    m.var2 = VectorXd::Ones(hp.n2);
    return m;
}

MatrixXd forward_batch(const DnnModel& m, const MatrixXd& rows) {
    if (rows.cols() != m.input_dim) {
        throw ShapeError("input rows have " + std::to_string(rows.cols()) + " columns, network expects " +
                         std::to_string(m.input_dim));
    }
    const auto refs = hidden_refs(m);
    const VectorXd& p = m.params;
    MatrixXd a = rows;
    for (int l = 0; l < 2; ++l) {
        const auto& r = refs[static_cast<std::size_t>(l)];
        const ConstMatMap W(p.data() + r.w, r.fan_in, r.fan_out);
        const ConstVecMap b(p.data() + r.b, r.fan_out);
        MatrixXd u = (a * W).rowwise() + b.transpose();
        if (m.hp.batch_norm) {
            const VectorXd& mean = l == 0 ? m.mean1 : m.mean2;
            const VectorXd& var = l == 0 ? m.var1 : m.var2;
            const ConstVecMap gamma(p.data() + r.g, r.fan_out);
            const ConstVecMap beta(p.data() + r.beta, r.fan_out);
            const VectorXd scale = gamma.cwiseProduct((var.array() + m.bn_epsilon).rsqrt().matrix());
            u = ((u.rowwise() - mean.transpose()) * scale.asDiagonal()).rowwise() + beta.transpose();
        }
        a = activate(m.hp.activation, u);
    }
    const ParamLayout L = m.layout();
    const ConstMatMap W3(p.data() + L.w3, m.hp.n2, kOutputs);
    const ConstVecMap b3(p.data() + L.b3, kOutputs);
    return (a * W3).rowwise() + b3.transpose();
}

VectorXd forward(const DnnModel& m, const VectorXd& row) {
    if (row.size() != m.input_dim) {
        throw ShapeError("input row has " + std::to_string(row.size()) + " values, network expects " +
                         std::to_string(m.input_dim));
    }
    return forward_batch(m, row.transpose()).row(0).transpose();
}

MatrixXd predict_prices(const DnnModel& m, const MatrixXd& raw_rows) {
    return m.y_scaler.invert(forward_batch(m, m.x_scaler.apply(raw_rows)));
}

VectorXd predict_prices(const DnnModel& m, const VectorXd& raw_row) {
    return predict_prices(m, MatrixXd(raw_row.transpose())).row(0).transpose();
}

LossGradient loss_and_gradient(const DnnModel& model, const MatrixXd& X, const MatrixXd& Y,
                               const DropoutMasks* masks) {
    if (X.cols() != model.input_dim || Y.cols() != kOutputs || X.rows() != Y.rows()) {
        throw ShapeError("training batch does not match the network shape");
    }
    ForwardCache cache;
    return loss_and_gradient_impl(model, X, Y, masks, cache);
}

TrainResult train(DnnModel& model, const MatrixXd& x_train, const MatrixXd& y_train,
                  const MatrixXd& x_val, const MatrixXd& y_val, const TrainOptions& options) {
    if (x_train.rows() == 0 || x_val.rows() == 0) {
        throw SplitError("training and validation sets must both be non-empty");
    }
    if (x_train.rows() != y_train.rows() || x_val.rows() != y_val.rows() ||
        x_train.cols() != model.input_dim || x_val.cols() != model.input_dim ||
        y_train.cols() != kOutputs || y_val.cols() != kOutputs) {
        throw ShapeError("training data does not match the network shape");
    }
    if (options.batch_size < 1 || options.max_epochs < 1 || options.patience < 0) {
        throw ConfigError("batch size and epoch budget must be positive, patience non-negative");
    }

    std::mt19937_64 rng(derive_seed(model.seed, 1));
    const Index n = x_train.rows();
    const Index batch = std::min<Index>(options.batch_size, n);
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    VectorXd m1 = VectorXd::Zero(model.params.size());
    VectorXd v1 = VectorXd::Zero(model.params.size());
    long step = 0;
    const double momentum = options.bn_momentum;
    model.bn_epsilon = options.bn_epsilon;

    TrainResult result;
    result.best_validation_mae = std::numeric_limits<double>::infinity();
    DnnModel best = model;
    int since_best = 0;
    ForwardCache cache;
    for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (Index start = 0; start < n; start += batch) {
            const Index size = std::min(batch, n - start);
            const std::vector<Index> idx(order.begin() + start, order.begin() + start + size);
            const MatrixXd xb = x_train(idx, Eigen::all);
            const MatrixXd yb = y_train(idx, Eigen::all);
            DropoutMasks masks;
            const bool drop = model.hp.dropout > 0.0;
            if (drop) {
                masks.m1 = dropout_mask(rng, size, model.hp.n1, model.hp.dropout);
                masks.m2 = dropout_mask(rng, size, model.hp.n2, model.hp.dropout);
            }
            const LossGradient lg =
                loss_and_gradient_impl(model, xb, yb, drop ? &masks : nullptr, cache);
            if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
                throw DivergenceError(epoch, "training loss is not finite");
            }
            loss_sum += lg.loss * static_cast<double>(size);
            if (model.hp.batch_norm) {
                model.mean1 = momentum * model.mean1 + (1.0 - momentum) * cache.hidden[0].batch_mean;
                model.var1 = momentum * model.var1 + (1.0 - momentum) * cache.hidden[0].batch_var;
                model.mean2 = momentum * model.mean2 + (1.0 - momentum) * cache.hidden[1].batch_mean;
                model.var2 = momentum * model.var2 + (1.0 - momentum) * cache.hidden[1].batch_var;
            }
            ++step;
            m1 = options.beta1 * m1 + (1.0 - options.beta1) * lg.gradient;
            v1 = options.beta2 * v1 + (1.0 - options.beta2) * lg.gradient.cwiseAbs2();
            const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
            model.params.array() -= model.hp.learning_rate * (m1.array() / c1) /
                                    ((v1.array() / c2).sqrt() + options.epsilon);
        }
        const MatrixXd pred = model.y_scaler.invert(forward_batch(model, x_val));
        const double val_mae = (pred - y_val).cwiseAbs().mean();
        if (!std::isfinite(val_mae)) {
            throw DivergenceError(epoch, "validation error is not finite");
        }
        result.history.push_back({epoch, loss_sum / static_cast<double>(n), val_mae});
        if (val_mae < result.best_validation_mae) {
            result.best_validation_mae = val_mae;
            result.best_epoch = epoch;
            best = model;
            since_best = 0;
        } else if (++since_best > options.patience) {
            break;
        }
    }
    model = std::move(best);
    return result;
}

TrainSplit make_split(std::size_t target, const WindowSpec& window, SplitMode mode, int max_lag,
                      std::uint64_t seed) {
    if (window.weeks < 1 || window.validation_weeks < 1 ||
        window.validation_weeks >= window.weeks) {
        throw ConfigError("window needs more weeks than its validation part");
    }
    const std::size_t days = static_cast<std::size_t>(window.weeks) * 7;
    if (target < days) {
        throw SliceError("day " + std::to_string(target) + " has fewer than " +
                         std::to_string(days) + " days of history");
    }
    const std::size_t first = target - days;
    const auto lag = static_cast<std::size_t>(std::max(max_lag, 0));
    auto week_usable = [&](int w) { return first + static_cast<std::size_t>(w) * 7 >= lag; };

    std::vector<int> validation;
    if (mode == SplitMode::chronological_tail) {
        for (int w = window.weeks - window.validation_weeks; w < window.weeks; ++w) {
            validation.push_back(w);
        }
    } else {
        std::vector<int> candidates;
        for (int w = 0; w < window.weeks; ++w) {
            if (week_usable(w)) candidates.push_back(w);
        }
        std::mt19937_64 rng(seed);
        std::shuffle(candidates.begin(), candidates.end(), rng);
        if (static_cast<int>(candidates.size()) < window.validation_weeks) {
            throw SplitError("not enough complete weeks for validation");
        }
        validation.assign(candidates.begin(), candidates.begin() + window.validation_weeks);
        std::sort(validation.begin(), validation.end());
    }
    for (int w : validation) {
        if (!week_usable(w)) throw SplitError("validation week lacks lag history");
    }

    TrainSplit split;
    split.mode = mode;
    std::vector<bool> is_val(static_cast<std::size_t>(window.weeks), false);
    for (int w : validation) is_val[static_cast<std::size_t>(w)] = true;
    for (std::size_t d = first; d < target; ++d) {
        const auto week = (d - first) / 7;
        if (is_val[week]) {
            split.validation_days.push_back(d);
        } else if (d >= lag) {
            split.train_days.push_back(d);
        }
    }
    return split;
}

FitResult fit(const data::HistoryView& view, const TrainSplit& split, const DnnHyperparams& hp,
              std::uint64_t seed, const TrainOptions& options) {
    hp.validate();
    const MatrixXd x_train = features::build_dnn_inputs(view, split.train_days, hp.mask);
    const MatrixXd y_train = price_rows(view, split.train_days);
    const MatrixXd x_val = features::build_dnn_inputs(view, split.validation_days, hp.mask);
    const MatrixXd y_val = price_rows(view, split.validation_days);

    FitResult r{build_network(hp, static_cast<int>(hp.mask.row_length()), seed), {}};
    r.model.x_scaler = transform::DnnScaler::fit(hp.scaler, x_train, weekday_passthrough(hp.mask));
    r.model.y_scaler = transform::DnnScaler::fit(hp.scaler, y_train);
    r.training = train(r.model, r.model.x_scaler.apply(x_train), r.model.y_scaler.apply(y_train),
                       r.model.x_scaler.apply(x_val), y_val, options);
    return r;
}

std::array<double, data::kHoursPerDay> recalibrate_forecast_day(
    const data::MarketDataset& dataset, std::size_t target, const DnnHyperparams& hp,
    std::uint64_t seed, const WindowSpec& window, const TrainOptions& options,
    data::AccessObserver* observer) {
    const data::HistoryView view = data::forecasting_view(dataset, target, observer);
    const TrainSplit split =
        make_split(target, window, SplitMode::random_weeks, hp.mask.max_lag(), derive_seed(seed, 2));
    const FitResult fitted = fit(view, split, hp, seed, options);
    const VectorXd row = features::build_dnn_row(view, target, hp.mask).values;
    const VectorXd prices = predict_prices(fitted.model, row);
    std::array<double, data::kHoursPerDay> out{};
    for (std::size_t h = 0; h < out.size(); ++h) out[h] = prices(static_cast<Index>(h));
    return out;
}

ForecastMatrix backtest_dnn(const data::MarketDataset& dataset, const data::TestPeriod& period,
                            const DnnHyperparams& hp, std::uint64_t seed, const WindowSpec& window,
                            const TrainOptions& options, const BacktestHooks& hooks,
                            unsigned jobs) {
    std::vector<std::size_t> targets;
    for (std::size_t k = 0; k < period.n_days; ++k) {
        const std::size_t target = period.first_index + k;
        if (hooks.already_done && hooks.already_done(dataset.date(target))) continue;
        targets.push_back(target);
    }
    using Row = std::array<double, data::kHoursPerDay>;
    std::vector<Row> rows(targets.size());
    const std::size_t chunk = std::max(jobs, 1u);
    for (std::size_t begin = 0; begin < targets.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, targets.size());
        std::vector<double> seconds(end - begin);
        parallel_for(end - begin, jobs, [&](std::size_t i) {
            const std::size_t target = targets[begin + i];
            if (jobs <= 1 && hooks.on_target) hooks.on_target(target);
            const auto start = std::chrono::steady_clock::now();
            const auto day_seed = derive_seed(
                seed, static_cast<std::uint64_t>(dataset.date(target).time_since_epoch().count()));
            rows[begin + i] = recalibrate_forecast_day(dataset, target, hp, day_seed, window,
                                                       options, hooks.observer);
            seconds[i] =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        });
        if (hooks.on_day) {
            for (std::size_t i = begin; i < end; ++i) {
                hooks.on_day(dataset.date(targets[i]), rows[i], seconds[i - begin]);
            }
        }
    }
    std::vector<Date> dates;
    for (std::size_t t : targets) dates.push_back(dataset.date(t));
    ForecastMatrix out = ForecastMatrix::with_dates(std::move(dates));
    for (std::size_t d = 0; d < rows.size(); ++d) out.set_row(d, rows[d]);
    return out;
}

void save_model(const DnnModel& model, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "epf-dnn";
    j["version"] = 1;
    j["input_dim"] = model.input_dim;
    j["outputs"] = kOutputs;
    j["seed"] = model.seed;
    j["hyperparams"] = to_key_values(model.hp);
    j["params"] = vec_json(model.params);
    j["bn_epsilon"] = model.bn_epsilon;
    j["bn"] = {{"mean1", vec_json(model.mean1)},
               {"var1", vec_json(model.var1)},
               {"mean2", vec_json(model.mean2)},
               {"var2", vec_json(model.var2)}};
    for (const auto& [name, scaler] : {std::pair{"x_scaler", &model.x_scaler},
                                       std::pair{"y_scaler", &model.y_scaler}}) {
        j[name] = {{"kind", transform::to_string(scaler->kind())},
                   {"shift", vec_json(scaler->shift())},
                   {"scale", vec_json(scaler->scale())}};
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump() << '\n';
    if (!out) throw DataError("write failed: " + path.string());
}

DnnModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        if (j.at("format") != "epf-dnn" || j.at("version") != 1) {
            throw DataError(path.string() + " is not a version 1 network checkpoint");
        }
        const auto hp = hyperparams_from_key_values(
            j.at("hyperparams").get<std::map<std::string, std::string>>());
        DnnModel m = build_network(hp, j.at("input_dim").get<int>(), j.at("seed").get<std::uint64_t>());
        const VectorXd params = json_vec(j.at("params"));
        if (params.size() != m.params.size()) {
            throw ShapeError("checkpoint holds " + std::to_string(params.size()) +
                             " parameters, shapes need " + std::to_string(m.params.size()));
        }
        m.params = params;
        m.bn_epsilon = j.at("bn_epsilon").get<double>();
        const auto& bn = j.at("bn");
        m.mean1 = json_vec(bn.at("mean1"));
        m.var1 = json_vec(bn.at("var1"));
        m.mean2 = json_vec(bn.at("mean2"));
        m.var2 = json_vec(bn.at("var2"));
        auto scaler = [&](const char* name) {
            const auto& s = j.at(name);
            return transform::DnnScaler::from_params(
                transform::parse_scaler_kind(s.at("kind").get<std::string>()),
                json_vec(s.at("shift")), json_vec(s.at("scale")));
        };
        m.x_scaler = scaler("x_scaler");
        m.y_scaler = scaler("y_scaler");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed checkpoint (" + e.what() + ")");
    }
}

}  // namespace epf::dnn
