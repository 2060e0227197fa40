#pragma once

// Dual-noise benchmark synthesis.
//
// 1. Gaussian class blobs plus a separate pool of out-of-distribution points.
// 2. Open-set noise: the records whose best cosine match in the pool is
//    strongest are swapped for that pool vector, keeping their label.
// 3. Closed-set noise on the remaining records: an instance-specific flip
//    rate q_i ~ clip(N(r_id, flip_std^2), 0, 1) and a part-dependent transition
//    row that spreads q_i over the other classes by softmax(x W_y).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "aeon/errors.hpp"
#include "aeon/rng.hpp"

namespace aeon {

inline constexpr const char* kGeneratorVersion = "aeon-synth/1";

enum class Tag { clean, id_noisy, ood };

inline const char* to_string(Tag t) {
    switch (t) {
        case Tag::clean: return "clean";
        case Tag::id_noisy: return "id_noisy";
        case Tag::ood: return "ood";
    }
    return "?";
}

inline Tag parse_tag(std::string_view s) {
    if (s == "clean") return Tag::clean;
    if (s == "id_noisy") return Tag::id_noisy;
    if (s == "ood") return Tag::ood;
    throw DataError("unknown tag '" + std::string(s) + "'");
}

struct SynthConfig {
    int num_classes = 8;
    int dim = 16;
    int samples_per_class = 500;
    int test_per_class = 250;
    double class_separation = 4.0;   // minimum pairwise distance of class means
    double class_std = 1.0;
    int ood_pool_size = 4000;
    int ood_components = 4;
    double ood_radius = 6.0;         // norm of pool component means
    double ood_offset = 5.0;         // minimum distance from every class mean
    double ood_std = 1.0;
    int embedding_dim = 0;           // 0 = identity embedding for similarity
    double r_id = 0.0;
    double r_ood = 0.0;
    double flip_std = 0.1;
    std::uint64_t seed = 0;

    int train_size() const { return num_classes * samples_per_class; }

    void validate() const {
        if (num_classes < 2) throw ConfigError("synth: need at least 2 classes");
        if (dim < 1 || samples_per_class < 1 || test_per_class < 0) throw ConfigError("synth: bad sizes");
        if (!(class_std > 0.0 && ood_std > 0.0)) throw ConfigError("synth: std must be positive");
        if (!(class_separation >= 0.0 && ood_offset >= 0.0 && ood_radius >= 0.0)) throw ConfigError("synth: negative distance");
        if (!(r_id >= 0.0 && r_id <= 1.0 && r_ood >= 0.0 && r_ood <= 1.0)) throw ConfigError("synth: rates must be in [0, 1]");
        if (!(flip_std >= 0.0)) throw ConfigError("synth: flip_std must be >= 0");
        if (ood_components < 1 || ood_pool_size < 0 || embedding_dim < 0) throw ConfigError("synth: bad pool settings");
        const long replaced = std::lround(r_ood * train_size());
        if (replaced > ood_pool_size) throw ConfigError("synth: r_ood * |D| exceeds OOD pool size");
    }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"num_classes", c.num_classes},
                       {"dim", c.dim},
                       {"samples_per_class", c.samples_per_class},
                       {"test_per_class", c.test_per_class},
                       {"class_separation", c.class_separation},
                       {"class_std", c.class_std},
                       {"ood_pool_size", c.ood_pool_size},
                       {"ood_components", c.ood_components},
                       {"ood_radius", c.ood_radius},
                       {"ood_offset", c.ood_offset},
                       {"ood_std", c.ood_std},
                       {"embedding_dim", c.embedding_dim},
                       {"r_id", c.r_id},
                       {"r_ood", c.r_ood},
                       {"flip_std", c.flip_std},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    SynthConfig d;
    c.num_classes = j.value("num_classes", d.num_classes);
    c.dim = j.value("dim", d.dim);
    c.samples_per_class = j.value("samples_per_class", d.samples_per_class);
    c.test_per_class = j.value("test_per_class", d.test_per_class);
    c.class_separation = j.value("class_separation", d.class_separation);
    c.class_std = j.value("class_std", d.class_std);
    c.ood_pool_size = j.value("ood_pool_size", d.ood_pool_size);
    c.ood_components = j.value("ood_components", d.ood_components);
    c.ood_radius = j.value("ood_radius", d.ood_radius);
    c.ood_offset = j.value("ood_offset", d.ood_offset);
    c.ood_std = j.value("ood_std", d.ood_std);
    c.embedding_dim = j.value("embedding_dim", d.embedding_dim);
    c.r_id = j.value("r_id", d.r_id);
    c.r_ood = j.value("r_ood", d.r_ood);
    c.flip_std = j.value("flip_std", d.flip_std);
    c.seed = j.value("seed", d.seed);
}

/// Feature rows with noisy labels and ground-truth provenance.
/// true_label is -1 exactly for tag == ood.
struct TaggedDataset {
    Eigen::MatrixXd features;  // N x d
    std::vector<int> noisy_label;
    std::vector<int> true_label;
    std::vector<Tag> tag;
    int num_classes = 0;
    SynthConfig config;
    std::string generator_version = kGeneratorVersion;

    std::size_t size() const { return noisy_label.size(); }
    int dim() const { return static_cast<int>(features.cols()); }

    std::size_t count(Tag t) const { return static_cast<std::size_t>(std::count(tag.begin(), tag.end(), t)); }

    /// Throws DataError on the first broken provenance invariant.
    void check_invariants() const {
        const std::size_t n = size();
        if (static_cast<std::size_t>(features.rows()) != n || true_label.size() != n || tag.size() != n) {
            throw DataError("dataset: column lengths differ");
        }
        for (std::size_t i = 0; i < n; ++i) {
            const int y = noisy_label[i], t = true_label[i];
            if (y < 0 || y >= num_classes) throw DataError("dataset: noisy label out of range at row " + std::to_string(i));
            switch (tag[i]) {
                case Tag::ood:
                    if (t != -1) throw DataError("dataset: ood row with a true label at row " + std::to_string(i));
                    break;
                case Tag::id_noisy:
                    if (t < 0 || t >= num_classes || t == y) throw DataError("dataset: bad id_noisy row " + std::to_string(i));
                    break;
                case Tag::clean:
                    if (t != y) throw DataError("dataset: clean row with flipped label at row " + std::to_string(i));
                    break;
            }
        }
    }
};

struct CleanData {
    Eigen::MatrixXd features;
    std::vector<int> labels;
    Eigen::MatrixXd class_means;  // C x d
};

struct GeneratedData {
    CleanData train;
    CleanData test;
    Eigen::MatrixXd ood_pool;
    Eigen::MatrixXd ood_means;
};

namespace detail {

inline Eigen::VectorXd random_direction(int dim, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(dim);
    do {
        for (int k = 0; k < dim; ++k) v(k) = n(rng);
    } while (v.norm() < 1e-12);
    return v.normalized();
}

inline Eigen::MatrixXd sample_blob(const Eigen::VectorXd& mean, double stddev, int count, Rng& rng) {
    std::normal_distribution<double> n(0.0, stddev);
    Eigen::MatrixXd x(count, mean.size());
    for (int i = 0; i < count; ++i)
        for (Eigen::Index k = 0; k < mean.size(); ++k) x(i, k) = mean(k) + n(rng);
    return x;
}

} // namespace detail

/// Class blobs (train and clean test) and the OOD pool. Class means lie on a
/// sphere of radius `class_separation` with pairwise distance at least
/// `class_separation`; pool component means lie at `ood_radius` and at least
/// `ood_offset` from every class mean.
inline GeneratedData generate_clean(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, {0x5EED}));
    const int c = cfg.num_classes, d = cfg.dim;

    Eigen::MatrixXd means(c, d);
    constexpr int kMaxTries = 10000;
    for (int k = 0; k < c; ++k) {
        int tries = 0;
        for (;;) {
            Eigen::VectorXd m = cfg.class_separation * detail::random_direction(d, rng);
            bool ok = true;
            for (int j = 0; j < k && ok; ++j) ok = (means.row(j).transpose() - m).norm() >= cfg.class_separation;
            if (ok) {
                means.row(k) = m.transpose();
                break;
            }
            if (++tries > kMaxTries) throw ConfigError("synth: cannot place class means at the requested separation");
        }
    }

    Eigen::MatrixXd ood_means(cfg.ood_components, d);
    for (int k = 0; k < cfg.ood_components; ++k) {
        int tries = 0;
        for (;;) {
            Eigen::VectorXd m = cfg.ood_radius * detail::random_direction(d, rng);
            bool ok = true;
            for (int j = 0; j < c && ok; ++j) ok = (means.row(j).transpose() - m).norm() >= cfg.ood_offset;
            if (ok) {
                ood_means.row(k) = m.transpose();
                break;
            }
            if (++tries > kMaxTries) throw ConfigError("synth: cannot place OOD means at the requested offset");
        }
    }

    GeneratedData out;
    out.train.class_means = means;
    out.test.class_means = means;
    out.ood_means = ood_means;
    auto fill = [&](CleanData& data, int per_class) {
        data.features.resize(static_cast<Eigen::Index>(c) * per_class, d);
        data.labels.resize(static_cast<std::size_t>(c) * per_class);
        for (int k = 0; k < c; ++k) {
            data.features.middleRows(static_cast<Eigen::Index>(k) * per_class, per_class) =
                detail::sample_blob(means.row(k).transpose(), cfg.class_std, per_class, rng);
            std::fill_n(data.labels.begin() + static_cast<std::ptrdiff_t>(k) * per_class, per_class, k);
        }
    };
    fill(out.train, cfg.samples_per_class);
    fill(out.test, cfg.test_per_class);

    out.ood_pool.resize(cfg.ood_pool_size, d);
    std::uniform_int_distribution<int> pick(0, cfg.ood_components - 1);
    for (int i = 0; i < cfg.ood_pool_size; ++i) {
        const int k = pick(rng);
        out.ood_pool.row(i) = detail::sample_blob(ood_means.row(k).transpose(), cfg.ood_std, 1, rng).row(0);
    }
    return out;
}

/// a.b / (max(|a|, eps) * max(|b|, eps)).
inline double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double eps = 1e-12) {
    if (a.size() != b.size()) throw StructuralError("cosine_similarity: length mismatch");
    return a.dot(b) / (std::max(a.norm(), eps) * std::max(b.norm(), eps));
}

/// Row-wise cosine similarity table (records x pool).
inline Eigen::MatrixXd cosine_table(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double eps = 1e-12) {
    Eigen::VectorXd na = a.rowwise().norm().cwiseMax(eps);
    Eigen::VectorXd nb = b.rowwise().norm().cwiseMax(eps);
    Eigen::MatrixXd s = a * b.transpose();
    s.array().colwise() /= na.array();
    s.array().rowwise() /= nb.transpose().array();
    return s;
}

/// Random linear embedding d -> e with N(0, 1/e) entries, or identity when e == 0.
inline Eigen::MatrixXd embedding_matrix(int dim, int embedding_dim, std::uint64_t seed) {
    if (embedding_dim == 0) return Eigen::MatrixXd::Identity(dim, dim);
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(embedding_dim)));
    Eigen::MatrixXd m(dim, embedding_dim);
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = n(rng);
    return m;
}

struct OodInjection {
    std::vector<std::size_t> replaced;   // record indices, in selection order
    std::vector<std::size_t> pool_items; // pool index used for each replaced record
};

/// Replaces the round(r_ood * N) records with the highest best-pool cosine
/// similarity by their most similar unused pool vector. Records are visited
/// in decreasing best similarity (ties: lower index first); each takes its
/// most similar pool item not yet used (ties: lower pool index).
inline OodInjection inject_ood(TaggedDataset& data, const Eigen::MatrixXd& pool, double r_ood,
                               const Eigen::MatrixXd& embed) {
    const std::size_t n = data.size();
    const auto k = static_cast<std::size_t>(std::lround(r_ood * static_cast<double>(n)));
    OodInjection out;
    if (k == 0) return out;
    if (k > static_cast<std::size_t>(pool.rows())) throw ConfigError("inject_ood: r_ood * |D| exceeds pool size");

    Eigen::MatrixXd sim = cosine_table(data.features * embed, pool * embed);
    std::vector<double> best(n);
    for (std::size_t i = 0; i < n; ++i) best[i] = sim.row(static_cast<Eigen::Index>(i)).maxCoeff();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return best[a] > best[b]; });

    std::vector<bool> used(static_cast<std::size_t>(pool.rows()), false);
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t i = order[r];
        Eigen::Index choice = -1;
        double top = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < pool.rows(); ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            const double s = sim(static_cast<Eigen::Index>(i), j);
            if (s > top) {
                top = s;
                choice = j;
            }
        }
        used[static_cast<std::size_t>(choice)] = true;
        data.features.row(static_cast<Eigen::Index>(i)) = pool.row(choice);
        data.true_label[i] = -1;
        data.tag[i] = Tag::ood;
        out.replaced.push_back(i);
        out.pool_items.push_back(static_cast<std::size_t>(choice));
    }
    return out;
}

/// Transition row for one record: diagonal 1 - q, off-diagonal mass q spread
/// by softmax over the non-true classes of x . W_y (true class excluded).
/// `class_block` is the d x C parameter block of the record's true class.
inline Eigen::VectorXd id_transition_row(const Eigen::VectorXd& x, int true_label, double flip_rate,
                                         const Eigen::MatrixXd& class_block) {
    if (!(flip_rate >= 0.0 && flip_rate <= 1.0)) throw ConfigError("id_transition_row: flip rate outside [0, 1]");
    const Eigen::Index c = class_block.cols();
    Eigen::VectorXd scores = class_block.transpose() * x;
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < c; ++k)
        if (k != true_label) m = std::max(m, scores(k));
    Eigen::VectorXd row = Eigen::VectorXd::Zero(c);
    double z = 0.0;
    for (Eigen::Index k = 0; k < c; ++k) {
        if (k == true_label) continue;
        row(k) = std::exp(scores(k) - m);
        z += row(k);
    }
    if (z > 0.0) row *= flip_rate / z;
    row(true_label) = 1.0 - flip_rate;
    return row;
}

struct IdInjection {
    std::vector<double> flip_rates;
    std::vector<Eigen::VectorXd> rows;  // transition row per eligible record
    std::size_t eligible = 0;
    std::size_t flipped = 0;
};

/// Flips labels of non-OOD records through instance-dependent transitions.
inline IdInjection inject_id(TaggedDataset& data, double r_id, double flip_std, std::uint64_t seed,
                             bool keep_rows = false) {
    const int c = data.num_classes;
    const int d = data.dim();
    Rng rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<Eigen::MatrixXd> blocks(static_cast<std::size_t>(c), Eigen::MatrixXd(d, c));
    for (auto& b : blocks)
        for (Eigen::Index col = 0; col < b.cols(); ++col)
            for (Eigen::Index r = 0; r < b.rows(); ++r) b(r, col) = unit(rng);

    IdInjection out;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.tag[i] == Tag::ood) continue;
        ++out.eligible;
        const int y = data.true_label[i];
        const double q = std::clamp(r_id + flip_std * unit(rng), 0.0, 1.0);
        Eigen::VectorXd row = id_transition_row(data.features.row(static_cast<Eigen::Index>(i)).transpose(), y, q,
                                                blocks[static_cast<std::size_t>(y)]);
        const double draw = u(rng);
        double acc = 0.0;
        int label = c - 1;
        for (int k = 0; k < c; ++k) {
            acc += row(k);
            if (draw < acc) {
                label = k;
                break;
            }
        }
        // Guard against the tail of the cumulative sum falling on a zero entry.
        if (row(label) == 0.0) label = y;
        data.noisy_label[i] = label;
        if (label != y) {
            data.tag[i] = Tag::id_noisy;
            ++out.flipped;
        }
        out.flip_rates.push_back(q);
        if (keep_rows) out.rows.push_back(std::move(row));
    }
    return out;
}

struct SynthesizedBenchmark {
    TaggedDataset train;
    TaggedDataset test;  // clean, never noise-injected
};

inline TaggedDataset from_clean(const CleanData& clean, const SynthConfig& cfg) {
    TaggedDataset t;
    t.features = clean.features;
    t.noisy_label = clean.labels;
    t.true_label = clean.labels;
    t.tag.assign(clean.labels.size(), Tag::clean);
    t.num_classes = cfg.num_classes;
    t.config = cfg;
    return t;
}

/// generate_clean -> inject_ood -> inject_id.
inline SynthesizedBenchmark synthesize(const SynthConfig& cfg) {
    GeneratedData g = generate_clean(cfg);
    SynthesizedBenchmark out{from_clean(g.train, cfg), from_clean(g.test, cfg)};
    Eigen::MatrixXd embed = embedding_matrix(cfg.dim, cfg.embedding_dim, derive_seed(cfg.seed, {0xE3B}));
    inject_ood(out.train, g.ood_pool, cfg.r_ood, embed);
    inject_id(out.train, cfg.r_id, cfg.flip_std, derive_seed(cfg.seed, {0x1D}));
    out.train.check_invariants();
    return out;
}

// ------------------------------------------------------------ file formats

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw DataError("format_double: conversion failed");
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad number '" + std::string(s) + "'");
    return v;
}

inline int parse_int(std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad integer '" + std::string(s) + "'");
    return v;
}

/// CSV: header f0..f{d-1},noisy_label,true_label,tag.
inline void write_csv(const TaggedDataset& data, std::ostream& os) {
    const int d = data.dim();
    for (int k = 0; k < d; ++k) os << 'f' << k << ',';
    os << "noisy_label,true_label,tag\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (int k = 0; k < d; ++k) os << format_double(data.features(static_cast<Eigen::Index>(i), k)) << ',';
        os << data.noisy_label[i] << ',' << data.true_label[i] << ',' << to_string(data.tag[i]) << '\n';
    }
}

inline TaggedDataset read_csv(std::istream& is, int num_classes) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("csv: missing header");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.size() < 4 || header[header.size() - 3] != "noisy_label" || header[header.size() - 2] != "true_label" ||
        header.back() != "tag") {
        throw DataError("csv: unexpected header");
    }
    const std::size_t d = header.size() - 3;
    for (std::size_t k = 0; k < d; ++k) {
        if (header[k] != "f" + std::to_string(k)) throw DataError("csv: unexpected feature column '" + header[k] + "'");
    }

    std::vector<double> feats;
    TaggedDataset out;
    out.num_classes = num_classes;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string_view> cells;
        std::string_view rest(line);
        while (true) {
            const auto pos = rest.find(',');
            cells.push_back(rest.substr(0, pos));
            if (pos == std::string_view::npos) break;
            rest.remove_prefix(pos + 1);
        }
        if (cells.size() != d + 3) throw DataError("csv: row " + std::to_string(row) + " has wrong column count");
        for (std::size_t k = 0; k < d; ++k) feats.push_back(parse_double(cells[k]));
        out.noisy_label.push_back(parse_int(cells[d]));
        out.true_label.push_back(parse_int(cells[d + 1]));
        out.tag.push_back(parse_tag(cells[d + 2]));
        ++row;
    }
    out.features = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        feats.data(), static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(d));
    return out;
}

inline nlohmann::json dataset_meta(const TaggedDataset& data) {
    return nlohmann::json{{"config", data.config},
                          {"seed", data.config.seed},
                          {"num_classes", data.num_classes},
                          {"dim", data.dim()},
                          {"generator_version", data.generator_version},
                          {"r_id", data.config.r_id},
                          {"r_ood", data.config.r_ood},
                          {"size", data.size()},
                          {"tag_counts",
                           {{"clean", data.count(Tag::clean)},
                            {"id_noisy", data.count(Tag::id_noisy)},
                            {"ood", data.count(Tag::ood)}}}};
}

/// `<dir>/<stem>.meta.json` next to a dataset path.
inline std::filesystem::path meta_path(const std::filesystem::path& csv) {
    return csv.parent_path() / (csv.stem().string() + ".meta.json");
}

/// `<dir>/<stem>.test.csv`: the clean test split written beside the training set.
inline std::filesystem::path test_split_path(const std::filesystem::path& csv) {
    return csv.parent_path() / (csv.stem().string() + ".test.csv");
}

inline void save_dataset(const TaggedDataset& data, const std::filesystem::path& csv) {
    {
        std::ofstream os(csv, std::ios::binary);
        if (!os) throw DataError("cannot write " + csv.string());
        write_csv(data, os);
    }
    std::ofstream ms(meta_path(csv), std::ios::binary);
    if (!ms) throw DataError("cannot write " + meta_path(csv).string());
    ms << dataset_meta(data).dump(2) << '\n';
}

/// Reads a dataset CSV and its sidecar; the sidecar supplies C and metadata.
inline TaggedDataset load_dataset(const std::filesystem::path& csv) {
    std::ifstream ms(meta_path(csv));
    if (!ms) throw DataError("missing metadata sidecar " + meta_path(csv).string());
    nlohmann::json meta;
    try {
        ms >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("metadata: ") + e.what());
    }
    std::ifstream is(csv, std::ios::binary);
    if (!is) throw DataError("cannot read " + csv.string());
    TaggedDataset data = read_csv(is, meta.at("num_classes").get<int>());
    data.config = meta.at("config").get<SynthConfig>();
    data.generator_version = meta.value("generator_version", std::string(kGeneratorVersion));
    data.check_invariants();
    return data;
}

inline void save_benchmark(const SynthesizedBenchmark& b, const std::filesystem::path& csv) {
    save_dataset(b.train, csv);
    std::ofstream os(test_split_path(csv), std::ios::binary);
    if (!os) throw DataError("cannot write " + test_split_path(csv).string());
    write_csv(b.test, os);
}

inline SynthesizedBenchmark load_benchmark(const std::filesystem::path& csv) {
    SynthesizedBenchmark b;
    b.train = load_dataset(csv);
    std::ifstream is(test_split_path(csv), std::ios::binary);
    if (!is) throw DataError("missing test split " + test_split_path(csv).string());
    b.test = read_csv(is, b.train.num_classes);
    b.test.config = b.train.config;
    b.test.check_invariants();
    return b;
}

} // namespace aeon
