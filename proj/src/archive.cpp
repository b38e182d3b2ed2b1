#include "polysed/archive.h"

#include "polysed/errors.h"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace polysed {

namespace {

using json = nlohmann::json;

constexpr std::uint32_t kVersion = 1;

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write " + path.string());
        }
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!out) {
            throw DataError("write failed for " + path.string());
        }
    }

private:
    template <class U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
        }
    }
    std::vector<unsigned char> buf_;
};

class ByteReader {
public:
    ByteReader(const std::filesystem::path& path, const char* magic) : what_(path.string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw DataError("cannot open " + what_);
        }
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        if (buf_.size() < 4 || std::memcmp(buf_.data(), magic, 4) != 0) {
            throw FormatError(what_ + ": bad magic, expected " + std::string(magic, 4));
        }
        pos_ = 4;
        const std::uint32_t version = u32();
        if (version != kVersion) {
            throw FormatError(what_ + ": unsupported version " + std::to_string(version));
        }
    }

    const unsigned char* take(std::size_t n) {
        if (n > buf_.size() - pos_) {
            throw FormatError(what_ + ": truncated");
        }
        const unsigned char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    std::string str() {
        const std::uint32_t n = u32();
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    std::size_t remaining() const { return buf_.size() - pos_; }
    void finish() const {
        if (pos_ != buf_.size()) {
            throw FormatError(what_ + ": " + std::to_string(buf_.size() - pos_) + " trailing bytes");
        }
    }
    const std::string& what() const { return what_; }

private:
    template <class U>
    U le() {
        const unsigned char* p = take(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(p[i]) << (8 * i);
        }
        return v;
    }
    std::string what_;
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
};

json config_to_json(const CapsNetConfig& c) {
    return json{{"cnn_kernels", c.cnn_kernels},
                {"cnn_kernel_dim", c.cnn_kernel_dim},
                {"time_kernel_dim", c.time_kernel_dim},
                {"pool_dims", c.pool_dims},
                {"n_primary_caps", c.n_primary_caps},
                {"primary_cap_dim", c.primary_cap_dim},
                {"output_cap_dim", c.output_cap_dim},
                {"routing_iters", c.routing_iters},
                {"n_events", c.n_events},
                {"dropout_rate", c.dropout_rate},
                {"l2_weight", c.l2_weight}};
}

CapsNetConfig config_from_json(const json& j) {
    CapsNetConfig c;
    c.cnn_kernels = j.at("cnn_kernels").get<std::vector<std::size_t>>();
    c.cnn_kernel_dim = j.at("cnn_kernel_dim").get<std::size_t>();
    c.time_kernel_dim = j.at("time_kernel_dim").get<std::size_t>();
    c.pool_dims = j.at("pool_dims").get<std::vector<std::size_t>>();
    c.n_primary_caps = j.at("n_primary_caps").get<std::size_t>();
    c.primary_cap_dim = j.at("primary_cap_dim").get<std::size_t>();
    c.output_cap_dim = j.at("output_cap_dim").get<std::size_t>();
    c.routing_iters = j.at("routing_iters").get<std::size_t>();
    c.n_events = j.at("n_events").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.l2_weight = j.at("l2_weight").get<double>();
    return c;
}

// JSON has no NaN; store it as null.
json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double number_from(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json history_to_json(const TrainHistory& h) {
    json epochs = json::array();
    for (const auto& e : h.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", number_or_null(e.train_loss)},
                          {"validation_er", number_or_null(e.validation_er)},
                          {"monitored", number_or_null(e.monitored)}});
    }
    return json{{"epochs", epochs},
                {"best_epoch", h.best_epoch},
                {"best_value", number_or_null(h.best_value)},
                {"stopped_early", h.stopped_early}};
}

TrainHistory history_from_json(const json& j) {
    TrainHistory h;
    for (const auto& e : j.at("epochs")) {
        EpochRecord r;
        r.epoch = e.at("epoch").get<std::size_t>();
        r.train_loss = number_from(e.at("train_loss"));
        r.validation_er = number_from(e.at("validation_er"));
        r.monitored = number_from(e.at("monitored"));
        h.epochs.push_back(r);
    }
    h.best_epoch = j.at("best_epoch").get<std::size_t>();
    h.best_value = number_from(j.at("best_value"));
    h.stopped_early = j.at("stopped_early").get<bool>();
    return h;
}

std::uint32_t narrow32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFu) {
        throw FormatError(std::string(what) + " does not fit in 32 bits");
    }
    return static_cast<std::uint32_t>(v);
}

}  // namespace

Tensor to_float32_precision(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.values()) {
        v = static_cast<double>(static_cast<float>(v));
    }
    return out;
}

void save_tfr(const Tfr& tfr, const std::filesystem::path& path) {
    if (tfr.values.rank() != 3) {
        throw ShapeError("save_tfr: values must be (frames, F, C), got " + to_string(tfr.values.shape()));
    }
    ByteWriter w;
    w.bytes("PSTF", 4);
    w.u32(kVersion);
    w.u32(tfr.config.kind == TfrKind::stft ? 0 : 1);
    w.u32(narrow32(tfr.num_bins(), "F"));
    w.u32(narrow32(tfr.num_channels(), "C"));
    w.u32(static_cast<std::uint32_t>(tfr.config.hop_ms));
    w.u32(static_cast<std::uint32_t>(tfr.config.frame_len_ms));
    w.u32(static_cast<std::uint32_t>(tfr.config.n_fft));
    w.u32(static_cast<std::uint32_t>(tfr.config.n_mels));
    w.u64(tfr.num_frames());
    for (const double v : tfr.values.values()) {
        w.f32(static_cast<float>(v));
    }
    w.save(path);
}

Tfr load_tfr(const std::filesystem::path& path) {
    ByteReader r(path, "PSTF");
    const std::uint32_t kind = r.u32();
    if (kind > 1) {
        throw FormatError(r.what() + ": unknown TFR kind " + std::to_string(kind));
    }
    Tfr tfr;
    tfr.config.kind = kind == 0 ? TfrKind::stft : TfrKind::logmel;
    const std::size_t bins = r.u32();
    const std::size_t channels = r.u32();
    tfr.config.hop_ms = static_cast<int>(r.u32());
    tfr.config.frame_len_ms = static_cast<int>(r.u32());
    tfr.config.n_fft = static_cast<int>(r.u32());
    tfr.config.n_mels = static_cast<int>(r.u32());
    const std::uint64_t frames = r.u64();
    if (bins == 0 || channels == 0 || frames > r.remaining() / 4 / bins / channels) {
        throw FormatError(r.what() + ": header does not match payload size");
    }
    tfr.values = Tensor({static_cast<std::size_t>(frames), bins, channels});
    for (double& v : tfr.values.values()) {
        v = r.f32();
    }
    r.finish();
    return tfr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const json header{{"config", config_to_json(ckpt.config)},
                      {"num_bins", ckpt.num_bins},
                      {"channels", ckpt.channels},
                      {"vocabulary", ckpt.vocabulary},
                      {"tfr", ckpt.tfr},
                      {"seed", ckpt.seed},
                      {"history", history_to_json(ckpt.history)}};
    const std::string text = header.dump();
    ByteWriter w;
    w.bytes("PSCK", 4);
    w.u32(kVersion);
    w.u64(text.size());
    w.bytes(text.data(), text.size());
    w.u32(narrow32(ckpt.parameters.size(), "parameter count"));
    for (const auto& [name, t] : ckpt.parameters) {
        w.str(name);
        w.u32(narrow32(t.rank(), "rank"));
        for (const std::size_t d : t.shape()) {
            w.u64(d);
        }
        for (const double v : t.values()) {
            w.f64(v);
        }
    }
    w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    ByteReader r(path, "PSCK");
    const std::uint64_t header_len = r.u64();
    if (header_len > r.remaining()) {
        throw FormatError(r.what() + ": truncated header");
    }
    const auto* p = r.take(static_cast<std::size_t>(header_len));
    Checkpoint ckpt;
    try {
        const json header = json::parse(p, p + header_len);
        ckpt.config = config_from_json(header.at("config"));
        ckpt.num_bins = header.at("num_bins").get<std::size_t>();
        ckpt.channels = header.at("channels").get<std::size_t>();
        ckpt.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
        ckpt.tfr = header.at("tfr").get<std::string>();
        ckpt.seed = header.at("seed").get<std::uint64_t>();
        ckpt.history = history_from_json(header.at("history"));
    } catch (const json::exception& e) {
        throw FormatError(r.what() + ": bad header: " + e.what());
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.u64());
        }
        const std::size_t n = numel(shape);
        if (n > r.remaining() / 8) {
            throw FormatError(r.what() + ": truncated parameter " + name);
        }
        Tensor t(shape);
        for (double& v : t.values()) {
            v = r.f64();
        }
        ckpt.parameters.emplace(std::move(name), std::move(t));
    }
    r.finish();
    return ckpt;
}

void save_predictions(const PredictionFile& pred, const std::filesystem::path& path) {
    const Tensor& a = pred.activity;
    if (a.rank() != 2 || a.dim(1) != pred.labels.size()) {
        throw ShapeError("save_predictions: activity " + to_string(a.shape()) + " does not match " +
                         std::to_string(pred.labels.size()) + " labels");
    }
    ByteWriter w;
    w.bytes("PSPR", 4);
    w.u32(kVersion);
    w.u64(a.dim(0));
    w.u32(narrow32(a.dim(1), "event count"));
    w.f64(pred.hop_sec);
    for (const auto& label : pred.labels) {
        w.str(label);
    }
    for (const double v : a.values()) {
        w.f32(static_cast<float>(v));
    }
    w.save(path);
}

PredictionFile load_predictions(const std::filesystem::path& path) {
    ByteReader r(path, "PSPR");
    const std::uint64_t frames = r.u64();
    const std::uint32_t events = r.u32();
    PredictionFile pred;
    pred.hop_sec = r.f64();
    for (std::uint32_t e = 0; e < events; ++e) {
        pred.labels.push_back(r.str());
    }
    if (events == 0 || frames > r.remaining() / 4 / events) {
        throw FormatError(r.what() + ": header does not match payload size");
    }
    pred.activity = Tensor({static_cast<std::size_t>(frames), events});
    for (double& v : pred.activity.values()) {
        v = r.f32();
    }
    r.finish();
    return pred;
}

std::string format_fusion_params(const FusionParams& params) {
    const FusionGrid& g = params.grid;
    const json j{{"weights", params.weights},
                 {"biases", params.biases},
                 {"thresholds", params.thresholds},
                 {"block_len", params.block_len},
                 {"grid",
                  {{"bias_min", g.bias_min},
                   {"bias_max", g.bias_max},
                   {"bias_step", g.bias_step},
                   {"eta_min", g.eta_min},
                   {"eta_max", g.eta_max},
                   {"eta_step", g.eta_step},
                   {"max_rounds", g.max_rounds}}}};
    return j.dump(2) + "\n";
}

FusionParams parse_fusion_params(const std::string& text) {
    try {
        const json j = json::parse(text);
        FusionParams p;
        p.weights = j.at("weights").get<std::vector<double>>();
        p.biases = j.at("biases").get<std::vector<double>>();
        p.thresholds = j.at("thresholds").get<std::vector<double>>();
        p.block_len = j.at("block_len").get<std::size_t>();
        const json& g = j.at("grid");
        p.grid.bias_min = g.at("bias_min").get<double>();
        p.grid.bias_max = g.at("bias_max").get<double>();
        p.grid.bias_step = g.at("bias_step").get<double>();
        p.grid.eta_min = g.at("eta_min").get<double>();
        p.grid.eta_max = g.at("eta_max").get<double>();
        p.grid.eta_step = g.at("eta_step").get<double>();
        p.grid.max_rounds = g.at("max_rounds").get<std::size_t>();
        p.validate(p.weights.size(), p.thresholds.size());
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("fusion params: ") + e.what());
    }
}

void save_fusion_params(const FusionParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << format_fusion_params(params);
}

FusionParams load_fusion_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_fusion_params(buf.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace polysed
