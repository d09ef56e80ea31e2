#include "cdpauth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>

#include "cdpauth/error.hpp"
#include "cdpauth/rng.hpp"

namespace cdpauth {

namespace {

const std::regex kAuthenticLabel("^HP([0-9]{2})$");
const std::regex kCounterfeitLabel("^HP([0-9]{2})_([0-9]{2})$");

bool in_range(double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; }

Image apply_dot_gain(const Image& in, double dot_gain, Rng& rng) {
    if (dot_gain == 0.0) return in;
    // Grow: paper pixels touching ink turn to ink. Shrink: ink pixels touching paper turn to paper.
    const double from = dot_gain > 0 ? 1.0 : 0.0;
    const double to = 1.0 - from;
    const double p = std::abs(dot_gain);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image out = in;
    for (int r = 0; r < in.rows; ++r)
        for (int c = 0; c < in.cols; ++c) {
            if (in(r, c) != from) continue;
            const bool edge = (r > 0 && in(r - 1, c) == to) || (r + 1 < in.rows && in(r + 1, c) == to) ||
                              (c > 0 && in(r, c - 1) == to) || (c + 1 < in.cols && in(r, c + 1) == to);
            // Draw for every candidate pixel so the stream does not depend on neighbourhood outcomes.
            const double draw = u(rng);
            if (edge && draw < p) out(r, c) = to;
        }
    return out;
}

// Bilinear resample at (r - dr, c - dc) with edge clamping.
Image apply_shift(const Image& in, double dr, double dc) {
    if (dr == 0.0 && dc == 0.0) return in;
    Image out(in.rows, in.cols);
    auto at = [&](int r, int c) { return in(std::clamp(r, 0, in.rows - 1), std::clamp(c, 0, in.cols - 1)); };
    for (int r = 0; r < in.rows; ++r)
        for (int c = 0; c < in.cols; ++c) {
            const double sr = r - dr, sc = c - dc;
            const int r0 = static_cast<int>(std::floor(sr)), c0 = static_cast<int>(std::floor(sc));
            const double fr = sr - r0, fc = sc - c0;
            out(r, c) = (1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) +
                        fr * ((1 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
        }
    return out;
}

Image quantize8(Image img) {
    for (double& v : img.px) v = std::lround(255.0 * std::clamp(v, 0.0, 1.0)) / 255.0;
    return img;
}

std::string class_dir(const PrinterClass& c) { return "images/" + c.label; }

std::string pad_id(int id) {
    std::string s = std::to_string(id);
    return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

}  // namespace

void ChannelParams::validate() const {
    if (!in_range(dot_gain, -0.3, 0.3)) throw InvalidArgument("channel: dot_gain outside [-0.3, 0.3]");
    if (!in_range(blur_sigma, 0.0, 1e9)) throw InvalidArgument("channel: blur_sigma must be >= 0");
    if (!in_range(noise_std, 0.0, 1e9)) throw InvalidArgument("channel: noise_std must be >= 0");
    if (!std::isfinite(gamma) || gamma <= 0.0) throw InvalidArgument("channel: gamma must be > 0");
    if (!in_range(shift[0], -0.5, 0.5) || !in_range(shift[1], -0.5, 0.5))
        throw InvalidArgument("channel: shift outside [-0.5, 0.5]^2");
    if (!in_range(shift_jitter, 0.0, 0.5)) throw InvalidArgument("channel: shift_jitter outside [0, 0.5]");
}

std::string PrinterClass::source_printer() const {
    std::smatch m;
    if (std::regex_match(label, m, kAuthenticLabel) || std::regex_match(label, m, kCounterfeitLabel))
        return m[1].str();
    return {};
}

std::string PrinterClass::reprint_printer() const {
    std::smatch m;
    if (std::regex_match(label, m, kCounterfeitLabel)) return m[2].str();
    return {};
}

void validate_class_table(const std::vector<PrinterClass>& classes) {
    if (classes.empty()) throw InvalidConfiguration("class table is empty");
    std::map<std::string, ChannelParams> printers;
    auto bind = [&](const std::string& code, const ChannelParams& ch, const std::string& label) {
        auto [it, inserted] = printers.emplace(code, ch);
        if (!inserted && !(it->second == ch))
            throw InvalidConfiguration("class " + label + ": channel for printer " + code +
                                       " disagrees with another class");
    };
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const auto& c = classes[i];
        if (c.class_id != static_cast<int>(i))
            throw InvalidConfiguration("class ids must be contiguous from 0; got " + std::to_string(c.class_id) +
                                       " at position " + std::to_string(i));
        const bool auth_label = std::regex_match(c.label, kAuthenticLabel);
        const bool fake_label = std::regex_match(c.label, kCounterfeitLabel);
        if (c.is_authentic && (!auth_label || c.reprint_channel))
            throw InvalidConfiguration("class " + c.label + ": authentic classes need label HPXX and no reprint channel");
        if (!c.is_authentic && (!fake_label || !c.reprint_channel))
            throw InvalidConfiguration("class " + c.label +
                                       ": counterfeit classes need label HPXX_YY and a reprint channel");
        try {
            c.source_channel.validate();
            if (c.reprint_channel) c.reprint_channel->validate();
        } catch (const InvalidArgument& e) {
            throw InvalidConfiguration("class " + c.label + ": " + e.what());
        }
        bind(c.source_printer(), c.source_channel, c.label);
        if (c.reprint_channel) bind(c.reprint_printer(), *c.reprint_channel, c.label);
        for (std::size_t j = 0; j < i; ++j)
            if (classes[j].label == c.label) throw InvalidConfiguration("duplicate class label " + c.label);
    }
    for (auto a = printers.begin(); a != printers.end(); ++a)
        for (auto b = std::next(a); b != printers.end(); ++b)
            if (a->second == b->second)
                throw InvalidConfiguration("printers " + a->first + " and " + b->first + " have identical channels");
}

ChannelParams hp55_channel() {
    ChannelParams c;
    c.dot_gain = 0.12;
    c.blur_sigma = 0.6;
    c.noise_std = 0.03;
    c.gamma = 1.1;
    c.shift_jitter = 0.25;
    c.stream = 55;
    return c;
}

ChannelParams hp76_channel() {
    ChannelParams c;
    c.dot_gain = -0.08;
    c.blur_sigma = 0.9;
    c.noise_std = 0.02;
    c.gamma = 0.9;
    c.shift_jitter = 0.25;
    c.stream = 76;
    return c;
}

std::vector<PrinterClass> default_classes() {
    const auto p55 = hp55_channel();
    const auto p76 = hp76_channel();
    return {
        {0, "HP55", p55, std::nullopt, true},
        {1, "HP76", p76, std::nullopt, true},
        {2, "HP55_55", p55, p55, false},
        {3, "HP55_76", p55, p76, false},
        {4, "HP76_76", p76, p76, false},
        {5, "HP76_55", p76, p55, false},
    };
}

int find_class(const std::vector<PrinterClass>& classes, const std::string& label) {
    for (const auto& c : classes)
        if (c.label == label) return c.class_id;
    return -1;
}

int expected_authentic_class(const std::vector<PrinterClass>& classes, int class_id) {
    const auto& c = classes.at(class_id);
    return find_class(classes, "HP" + c.source_printer());
}

BinaryTemplate gen_template(std::uint64_t seed, int side, int template_id) {
    if (side < 8) throw InvalidArgument("gen_template: side must be >= 8, got " + std::to_string(side));
    Rng rng(seed);
    std::bernoulli_distribution bit(0.5);
    BinaryTemplate t{template_id, Image(side, side)};
    for (double& v : t.pixels.px) v = bit(rng) ? 1.0 : 0.0;
    return t;
}

PrintStages print_cdp_stages(const BinaryTemplate& tmpl, const ChannelParams& channel, std::uint64_t seed) {
    channel.validate();
    Rng rng(derive_seed(seed, {seed_tag::print, channel.stream}));
    PrintStages s;
    s.dot_gained = apply_dot_gain(tmpl.pixels, channel.dot_gain, rng);

    std::uniform_real_distribution<double> jitter(-channel.shift_jitter, channel.shift_jitter);
    double dr = channel.shift[0], dc = channel.shift[1];
    if (channel.shift_jitter > 0.0) {
        dr = std::clamp(dr + jitter(rng), -0.5, 0.5);
        dc = std::clamp(dc + jitter(rng), -0.5, 0.5);
    }
    s.shifted = apply_shift(s.dot_gained, dr, dc);
    s.blurred = gaussian_blur(s.shifted, channel.blur_sigma);
    s.toned = s.blurred;
    if (channel.gamma != 1.0)
        for (double& v : s.toned.px) v = std::pow(std::clamp(v, 0.0, 1.0), channel.gamma);
    s.noised = s.toned;
    if (channel.noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, channel.noise_std);
        for (double& v : s.noised.px) v += noise(rng);
    }
    s.output = s.noised;
    for (double& v : s.output.px) v = std::clamp(v, 0.0, 1.0);
    return s;
}

PrintedCdp print_cdp(const BinaryTemplate& tmpl, const ChannelParams& channel, std::uint64_t seed) {
    return {tmpl.template_id, 0, print_cdp_stages(tmpl, channel, seed).output};
}

int otsu_threshold_bin(const Image& img) {
    std::array<double, 256> hist{};
    for (double v : img.px) hist[std::clamp<long>(std::lround(255.0 * v), 0, 255)] += 1.0;
    if (std::count_if(hist.begin(), hist.end(), [](double h) { return h > 0.0; }) < 2)
        throw DegenerateInput("estimate_template: image has a single intensity level");

    const double total = static_cast<double>(img.px.size());
    double sum_all = 0.0;
    for (int k = 0; k < 256; ++k) sum_all += k * hist[k];

    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_k = 0;
    for (int k = 0; k < 255; ++k) {
        w0 += hist[k];
        sum0 += k * hist[k];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_k = k;
        }
    }
    return best_k;
}

BinaryTemplate estimate_template(const PrintedCdp& printed) {
    const int k = otsu_threshold_bin(printed.pixels);
    BinaryTemplate out{printed.template_id, Image(printed.pixels.rows, printed.pixels.cols)};
    for (std::size_t i = 0; i < printed.pixels.px.size(); ++i)
        out.pixels.px[i] = std::clamp<long>(std::lround(255.0 * printed.pixels.px[i]), 0, 255) > k ? 1.0 : 0.0;
    return out;
}

PrintedCdp make_counterfeit(const BinaryTemplate& tmpl, const ChannelParams& src, const ChannelParams& dst,
                            std::uint64_t seed) {
    const auto first = print_cdp(tmpl, src, derive_seed(seed, {seed_tag::counterfeit_src}));
    const auto estimate = estimate_template(first);
    return print_cdp(estimate, dst, derive_seed(seed, {seed_tag::counterfeit_dst}));
}

Dataset build_dataset(const std::vector<PrinterClass>& classes, int n_templates, std::uint64_t seed, int side) {
    validate_class_table(classes);
    if (n_templates < 1) throw InvalidArgument("build_dataset: n_templates must be >= 1");
    Dataset ds;
    ds.manifest.side = side;
    ds.manifest.n_templates = n_templates;
    ds.manifest.seed = seed;
    ds.manifest.classes = classes;
    ds.templates.reserve(n_templates);
    for (int id = 0; id < n_templates; ++id) {
        auto tmpl = gen_template(derive_seed(seed, {seed_tag::template_bits, static_cast<std::uint64_t>(id)}), side, id);
        for (const auto& cls : classes) {
            const auto sample_seed = derive_seed(
                seed, {seed_tag::dataset, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(cls.class_id)});
            PrintedCdp p = cls.is_authentic ? print_cdp(tmpl, cls.source_channel, sample_seed)
                                            : make_counterfeit(tmpl, cls.source_channel, *cls.reprint_channel, sample_seed);
            p.class_id = cls.class_id;
            p.pixels = quantize8(std::move(p.pixels));
            ds.manifest.samples.push_back({id, cls.class_id, sample_seed,
                                           class_dir(cls) + "/t" + pad_id(id) + ".png",
                                           "templates/t" + pad_id(id) + ".png"});
            ds.prints.push_back(std::move(p));
        }
        ds.templates.push_back(std::move(tmpl));
    }
    return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "templates", ec);
    if (ec) throw IoError("cannot create " + (dir / "templates").string() + ": " + ec.message());
    for (const auto& c : ds.manifest.classes) {
        fs::create_directories(dir / class_dir(c), ec);
        if (ec) throw IoError("cannot create " + (dir / class_dir(c)).string() + ": " + ec.message());
    }
    for (const auto& t : ds.templates) write_png(dir / ("templates/t" + pad_id(t.template_id) + ".png"), t.pixels);
    for (std::size_t i = 0; i < ds.prints.size(); ++i)
        write_png(dir / ds.manifest.samples[i].image_path, ds.prints[i].pixels);

    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << to_json(ds.manifest).dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw IoError("manifest not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfiguration("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    Dataset ds;
    ds.manifest = manifest_from_json(j);
    validate_class_table(ds.manifest.classes);
    ds.templates.resize(ds.manifest.n_templates);
    std::vector<bool> seen(ds.manifest.n_templates, false);
    for (const auto& s : ds.manifest.samples) {
        if (s.template_id < 0 || s.template_id >= ds.manifest.n_templates ||
            s.class_id < 0 || s.class_id >= static_cast<int>(ds.manifest.classes.size()))
            throw InvalidConfiguration("manifest sample references unknown template or class");
        if (!seen[s.template_id]) {
            ds.templates[s.template_id] = {s.template_id, read_png(dir / s.template_path)};
            seen[s.template_id] = true;
        }
        ds.prints.push_back({s.template_id, s.class_id, read_png(dir / s.image_path)});
    }
    return ds;
}

nlohmann::json to_json(const ChannelParams& c) {
    return {{"dot_gain", c.dot_gain}, {"blur_sigma", c.blur_sigma}, {"noise_std", c.noise_std},
            {"gamma", c.gamma},       {"shift", {c.shift[0], c.shift[1]}}, {"shift_jitter", c.shift_jitter},
            {"stream", c.stream}};
}

ChannelParams channel_from_json(const nlohmann::json& j) {
    ChannelParams c;
    c.dot_gain = j.value("dot_gain", c.dot_gain);
    c.blur_sigma = j.value("blur_sigma", c.blur_sigma);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.gamma = j.value("gamma", c.gamma);
    if (j.contains("shift")) c.shift = {j.at("shift").at(0).get<double>(), j.at("shift").at(1).get<double>()};
    c.shift_jitter = j.value("shift_jitter", c.shift_jitter);
    c.stream = j.value("stream", c.stream);
    return c;
}

nlohmann::json to_json(const std::vector<PrinterClass>& classes) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : classes) {
        nlohmann::json e = {{"id", c.class_id},
                            {"label", c.label},
                            {"authentic", c.is_authentic},
                            {"source_channel", to_json(c.source_channel)}};
        e["reprint_channel"] = c.reprint_channel ? to_json(*c.reprint_channel) : nlohmann::json(nullptr);
        arr.push_back(std::move(e));
    }
    return arr;
}

std::vector<PrinterClass> classes_from_json(const nlohmann::json& j) {
    std::vector<PrinterClass> out;
    for (const auto& e : j) {
        PrinterClass c;
        c.class_id = e.at("id").get<int>();
        c.label = e.at("label").get<std::string>();
        c.is_authentic = e.at("authentic").get<bool>();
        c.source_channel = channel_from_json(e.at("source_channel"));
        if (e.contains("reprint_channel") && !e.at("reprint_channel").is_null())
            c.reprint_channel = channel_from_json(e.at("reprint_channel"));
        out.push_back(std::move(c));
    }
    return out;
}

nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : m.samples)
        samples.push_back({{"template_id", s.template_id},
                           {"class_id", s.class_id},
                           {"seed", s.seed},
                           {"image", s.image_path},
                           {"template", s.template_path}});
    return {{"schema_version", m.schema_version},
            {"side", m.side},
            {"n_templates", m.n_templates},
            {"seed", m.seed},
            {"classes", to_json(m.classes)},
            {"samples", std::move(samples)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
        m.schema_version = j.at("schema_version").get<int>();
        if (m.schema_version != DatasetManifest::kSchemaVersion)
            throw CompatibilityError("manifest schema_version " + std::to_string(m.schema_version) +
                                     " is not supported (expected " +
                                     std::to_string(DatasetManifest::kSchemaVersion) + ")");
        m.side = j.at("side").get<int>();
        m.n_templates = j.at("n_templates").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.classes = classes_from_json(j.at("classes"));
        for (const auto& s : j.at("samples"))
            m.samples.push_back({s.at("template_id").get<int>(), s.at("class_id").get<int>(),
                                 s.at("seed").get<std::uint64_t>(), s.at("image").get<std::string>(),
                                 s.at("template").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfiguration(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

}  // namespace cdpauth
