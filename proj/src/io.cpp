#include "convformer/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace convformer {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw std::runtime_error("cannot move " + tmp.string() + " to " + path.string());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Field {
    std::string key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, std::string_view)> set;  // throws std::invalid_argument
};

std::size_t parse_size(std::string_view v) {
    std::size_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size())
        throw std::invalid_argument("expected a non-negative integer, got '" + std::string(v) + "'");
    return out;
}

double parse_real(std::string_view v) {
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || !std::isfinite(out))
        throw std::invalid_argument("expected a finite number, got '" + std::string(v) + "'");
    return out;
}

bool parse_bool(std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

template <class Access>
Field field(std::string key, Access access) {
    using T = std::remove_cvref_t<decltype(access(std::declval<TrainConfig&>()))>;
    Field f{std::move(key), {}, {}};
    f.get = [access](const TrainConfig& c) {
        const T& v = access(const_cast<TrainConfig&>(c));
        if constexpr (std::is_same_v<T, bool>)
            return std::string(v ? "true" : "false");
        else if constexpr (std::is_same_v<T, double>)
            return format_double(v);
        else
            return std::to_string(v);
    };
    f.set = [access](TrainConfig& c, std::string_view v) {
        if constexpr (std::is_same_v<T, bool>)
            access(c) = parse_bool(v);
        else if constexpr (std::is_same_v<T, double>)
            access(c) = parse_real(v);
        else
            access(c) = parse_size(v);
    };
    return f;
}

#define CF_FIELD(key, expr) field(key, [](TrainConfig& c) -> auto& { return c.expr; })

const std::vector<Field>& fields() {
    static const std::vector<Field> table{
        CF_FIELD("model.in_channels", model.in_channels),
        CF_FIELD("model.embed_channels", model.embed_channels),
        CF_FIELD("model.query_channels", model.query_channels),
        CF_FIELD("model.hidden_channels", model.hidden_channels),
        CF_FIELD("model.patch_size", model.patch_size),
        CF_FIELD("model.alpha", model.alpha),
        CF_FIELD("model.heads", model.heads),
        CF_FIELD("model.layers", model.layers),
        CF_FIELD("model.num_classes", model.num_classes),
        CF_FIELD("model.height", model.height),
        CF_FIELD("model.width", model.width),
        CF_FIELD("train.epochs", epochs),
        CF_FIELD("train.batch_size", batch_size),
        CF_FIELD("train.learning_rate", learning_rate),
        CF_FIELD("train.beta1", beta1),
        CF_FIELD("train.beta2", beta2),
        CF_FIELD("train.adam_eps", adam_eps),
        CF_FIELD("train.train_samples", train_samples),
        CF_FIELD("train.heldout_samples", heldout_samples),
        CF_FIELD("train.max_steps", max_steps),
        CF_FIELD("train.checkpoint_every", checkpoint_every),
        CF_FIELD("train.augment", augment),
        CF_FIELD("augment.rotation_deg", ranges.rotation_deg),
        CF_FIELD("augment.scale_min", ranges.scale_min),
        CF_FIELD("augment.scale_max", ranges.scale_max),
        CF_FIELD("augment.contrast_min", ranges.contrast_min),
        CF_FIELD("augment.contrast_max", ranges.contrast_max),
        CF_FIELD("augment.gamma_min", ranges.gamma_min),
        CF_FIELD("augment.gamma_max", ranges.gamma_max),
        CF_FIELD("data.num_classes", data.num_classes),
        CF_FIELD("data.fg_probability", data.fg_probability),
        CF_FIELD("data.ellipse_fraction", data.ellipse_fraction),
        CF_FIELD("data.min_radius", data.min_radius),
        CF_FIELD("data.max_radius", data.max_radius),
        CF_FIELD("data.background", data.background),
        CF_FIELD("data.foreground_offset", data.foreground_offset),
        CF_FIELD("data.noise_std", data.noise_std),
    };
    return table;
}

#undef CF_FIELD

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

TrainConfig parse_config(std::string_view text) {
    TrainConfig cfg;
    std::map<std::string, std::size_t> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        const std::string where = "config line " + std::to_string(line_no) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigParseError(where + "expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto& table = fields();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end()) throw ConfigParseError(where + "unknown key '" + key + "'");
        if (const auto [prev, fresh] = seen.emplace(key, line_no); !fresh)
            throw ConfigParseError(where + "duplicate key '" + key + "' (first set on line " +
                                   std::to_string(prev->second) + ")");
        try {
            it->set(cfg, value);
        } catch (const std::invalid_argument& e) {
            throw ConfigParseError(where + key + ": " + e.what());
        }
    }
    return cfg;
}

std::string serialize_config(const TrainConfig& config) {
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        const std::string s = f.key.substr(0, f.key.find('.'));
        if (s != section) {
            if (!section.empty()) out += '\n';
            out += "# " + s + "\n";
            section = s;
        }
        out += f.key + " = " + f.get(config) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        const auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n)
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  std::string("checkpoint truncated while reading ") + what);
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "CFRM";
constexpr std::size_t kHeaderBytes = 4 + 2 + 8;
constexpr std::size_t kMaxRank = 4;

}  // namespace

std::string encode_checkpoint(const NamedTensors& tensors) {
    std::string out(kMagic);
    put<std::uint16_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
        for (double v : t.values()) put<double>(out, v);
    }
    put<std::uint64_t>(out, fnv1a(out));
    return out;
}

NamedTensors decode_checkpoint(std::string_view bytes) {
    using K = CheckpointError::Kind;
    if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
        if (bytes.size() < kMagic.size() && kMagic.starts_with(bytes))
            throw CheckpointError(K::truncated, "checkpoint truncated inside the magic number");
        throw CheckpointError(K::bad_magic, "not a checkpoint (missing CFRM magic)");
    }
    Reader header(bytes.substr(kMagic.size()));
    const auto version = header.get<std::uint16_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError(K::version, "checkpoint version " + std::to_string(version) + " is not supported (this build reads version " +
                                              std::to_string(kCheckpointVersion) + ")");
    if (bytes.size() < kHeaderBytes + 8) throw CheckpointError(K::truncated, "checkpoint truncated before the checksum");
    const auto body = bytes.substr(0, bytes.size() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), 8);
    if (stored != fnv1a(body)) throw CheckpointError(K::checksum, "checkpoint checksum mismatch");

    Reader in(body.substr(kMagic.size() + 2));
    const auto count = in.get<std::uint64_t>("tensor count");
    NamedTensors out;
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto name_len = in.get<std::uint32_t>("name length");
        std::string name(in.take(name_len, "name"));
        const auto rank = in.get<std::uint8_t>("rank");
        if (rank == 0 || rank > kMaxRank)
            throw CheckpointError(K::content, "tensor '" + name + "' has unsupported rank " + std::to_string(rank));
        Shape shape(rank);
        std::size_t numel = 1;
        for (auto& e : shape) {
            e = in.get<std::uint64_t>("extent");
            if (e == 0 || e > in.remaining() / 8)
                throw CheckpointError(K::content, "tensor '" + name + "' has an invalid extent");
            numel *= e;
            if (numel > in.remaining() / 8)
                throw CheckpointError(K::truncated, "checkpoint truncated inside tensor '" + name + "'");
        }
        std::vector<double> values(numel);
        const auto raw = in.take(numel * 8, "values");
        std::memcpy(values.data(), raw.data(), raw.size());
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (in.remaining() != 0) throw CheckpointError(K::content, "checkpoint has trailing bytes after the last tensor");
    return out;
}

namespace {

struct ModelField {
    const char* name;
    std::size_t ConvFormerConfig::*size_member;
};

constexpr ModelField kModelFields[] = {
    {"in_channels", &ConvFormerConfig::in_channels},   {"embed_channels", &ConvFormerConfig::embed_channels},
    {"query_channels", &ConvFormerConfig::query_channels}, {"hidden_channels", &ConvFormerConfig::hidden_channels},
    {"patch_size", &ConvFormerConfig::patch_size},     {"heads", &ConvFormerConfig::heads},
    {"layers", &ConvFormerConfig::layers},             {"num_classes", &ConvFormerConfig::num_classes},
    {"height", &ConvFormerConfig::height},             {"width", &ConvFormerConfig::width},
};

}  // namespace

NamedTensors model_tensors(const SegModel& model) {
    NamedTensors out;
    for (const auto& f : kModelFields)
        out.emplace_back(std::string("config.") + f.name,
                         Tensor({1}, {static_cast<double>(model.config.*f.size_member)}));
    out.emplace_back("config.alpha", Tensor({1}, {model.config.alpha}));
    visit_params(model, std::string{}, [&](const std::string& name, const Tensor& t, ParamKind) {
        out.emplace_back(name, t);
    });
    return out;
}

SegModel model_from_tensors(const NamedTensors& tensors) {
    using K = CheckpointError::Kind;
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : tensors)
        if (!by_name.emplace(name, &t).second) throw CheckpointError(K::content, "duplicate tensor '" + name + "'");
    auto scalar = [&](const std::string& key) {
        const auto it = by_name.find("config." + key);
        if (it == by_name.end() || it->second->size() != 1)
            throw CheckpointError(K::content, "checkpoint lacks config." + key);
        return (*it->second)[0];
    };

    ConvFormerConfig cfg;
    for (const auto& f : kModelFields) {
        const double v = scalar(f.name);
        if (!(v >= 0.0) || v != std::floor(v) || v > 1e12)
            throw CheckpointError(K::content, std::string("config.") + f.name + " is not a valid count");
        cfg.*f.size_member = static_cast<std::size_t>(v);
    }
    cfg.alpha = scalar("alpha");
    SegModel model;
    try {
        model = build(cfg, 0);
    } catch (const ConfigError& e) {
        throw CheckpointError(K::content, std::string("checkpoint holds an invalid config: ") + e.what());
    }

    std::size_t used = 1 + std::size(kModelFields);
    visit_params(model, std::string{}, [&](const std::string& name, Tensor& t, ParamKind) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw CheckpointError(K::content, "checkpoint lacks tensor '" + name + "'");
        if (it->second->shape() != t.shape())
            throw CheckpointError(K::content, "tensor '" + name + "' has shape " + shape_str(it->second->shape()) +
                                                  ", expected " + shape_str(t.shape()));
        t = *it->second;
        ++used;
    });
    if (used != tensors.size()) throw CheckpointError(K::content, "checkpoint holds tensors this model does not use");
    return model;
}

void save_checkpoint(const SegModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(model_tensors(model)));
}

SegModel load_checkpoint(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const std::runtime_error& e) {
        throw CheckpointError(CheckpointError::Kind::io, e.what());
    }
    return model_from_tensors(decode_checkpoint(bytes));
}

// ---------------------------------------------------------------------------
// Images

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

}  // namespace

GrayImage export_attention(const AttentionField& attn, std::size_t head, std::size_t i, std::size_t j) {
    if (head >= attn.heads())
        throw std::out_of_range("head " + std::to_string(head) + " out of range (" + std::to_string(attn.heads()) +
                                " heads)");
    if (i >= attn.height || j >= attn.width)
        throw std::out_of_range("query (" + std::to_string(i) + ", " + std::to_string(j) + ") outside the " +
                                std::to_string(attn.height) + "x" + std::to_string(attn.width) + " grid");
    GrayImage img{attn.height, attn.width, {}};
    img.pixels.reserve(attn.positions());
    const auto& a = attn.field[head];
    for (std::size_t m = 0; m < attn.height; ++m)
        for (std::size_t n = 0; n < attn.width; ++n) img.pixels.push_back(to_byte(255.0 * (a.at(i, j, m, n) + 1.0) / 2.0));
    return img;
}

GrayImage image_to_gray(const Tensor& image) {
    const auto& s = image.shape();
    if (s.size() != 3 || s[0] != 1) throw ShapeError("image_to_gray: expected [1, H, W], got " + shape_str(s));
    GrayImage img{s[1], s[2], {}};
    for (double v : image.values()) img.pixels.push_back(to_byte(255.0 * v));
    return img;
}

GrayImage mask_to_gray(const std::vector<int>& mask, std::size_t height, std::size_t width, std::size_t num_classes) {
    if (mask.size() != height * width) throw ShapeError("mask_to_gray: mask size does not match extents");
    const double step = num_classes > 1 ? 255.0 / static_cast<double>(num_classes - 1) : 0.0;
    GrayImage img{height, width, {}};
    for (int c : mask) img.pixels.push_back(to_byte(step * c));
    return img;
}

std::string encode_pgm(const GrayImage& image, std::string_view comment) {
    std::string out = "P5\n";
    if (!comment.empty()) out += "# " + std::string(comment) + "\n";
    out += std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    return out;
}

// ---------------------------------------------------------------------------
// CSV

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
    os << "epoch,metric,class,value\n";
    for (const auto& e : history) {
        os << e.epoch << ",loss,all," << format_double(e.loss) << '\n';
        for (std::size_t k = 0; k < e.eval.dice.size(); ++k)
            os << e.epoch << ",dice," << k + 1 << ',' << format_double(e.eval.dice[k]) << '\n';
        for (std::size_t k = 0; k < e.eval.hd.size(); ++k)
            os << e.epoch << ",hd," << k + 1 << ',' << format_double(e.eval.hd[k]) << '\n';
        os << e.epoch << ",collapse_score,all," << format_double(e.eval.collapse_score) << '\n';
    }
}

void write_eval_csv(std::ostream& os, const EvalResult& eval) {
    os << "metric,class,value\n";
    for (std::size_t k = 0; k < eval.dice.size(); ++k) os << "dice," << k + 1 << ',' << format_double(eval.dice[k]) << '\n';
    for (std::size_t k = 0; k < eval.hd.size(); ++k) os << "hd," << k + 1 << ',' << format_double(eval.hd[k]) << '\n';
    os << "collapse_score,all," << format_double(eval.collapse_score) << '\n';
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
    os << "alpha,dice,hd,steps\n";
    for (const auto& r : rows)
        os << format_double(r.alpha) << ',' << format_double(r.dice) << ',' << format_double(r.hd) << ',' << r.steps
           << '\n';
}

}  // namespace convformer
