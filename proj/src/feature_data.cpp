#include "mmfusion/feature_data.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "binary_io.hpp"
#include "mmfusion/error.hpp"
#include "random.hpp"

namespace mmfusion {

namespace {

constexpr char kMagic[] = "MMFN";
constexpr std::uint32_t kVersion = 1;

bool valid_dims(const FeatureDims& d) {
    return d.text_dim > 0 && d.image_dim > 0 && d.text_len > 0 && d.image_len > 0;
}

// Class-conditional sample: +strength (fake) or -strength (real) on the signal
// dimensions when sign != 0, plus isotropic noise everywhere.
Matrix draw_modality(detail::Rng& rng, std::size_t len, std::size_t dim, double sign, const SyntheticSpec& spec) {
    Matrix m(len, dim);
    const std::size_t k = signal_dims(dim);
    for (std::size_t r = 0; r < len; ++r) {
        for (std::size_t c = 0; c < dim; ++c) {
            const double mean = c < k ? sign * spec.signal_strength : 0.0;
            m(r, c) = mean + spec.noise_std * rng.normal();
        }
    }
    return m;
}

}  // namespace

const char* to_string(Provenance p) noexcept {
    switch (p) {
        case Provenance::Unknown: return "unknown";
        case Provenance::TextInformative: return "text";
        case Provenance::ImageInformative: return "image";
        case Provenance::BothInformative: return "both";
    }
    return "unknown";
}

std::size_t Dataset::count_label(int label) const noexcept {
    std::size_t n = 0;
    for (const auto& r : records) n += r.label == label ? 1 : 0;
    return n;
}

void Dataset::validate() const {
    if (!valid_dims(dims)) {
        throw InputError("dataset dims must be positive");
    }
    for (const auto& r : records) {
        if (r.label != 0 && r.label != 1) {
            throw InputError("record " + r.id + ": label " + std::to_string(r.label) + " outside {0,1}");
        }
        if (r.text_features.rows() != dims.text_len || r.text_features.cols() != dims.text_dim ||
            r.image_features.rows() != dims.image_len || r.image_features.cols() != dims.image_dim) {
            throw InputError("record " + r.id + ": feature shapes " + r.text_features.shape_string() + "/" +
                             r.image_features.shape_string() + " disagree with dataset dims");
        }
    }
}

void SyntheticSpec::validate() const {
    if (n_samples == 0) {
        throw InputError("n_samples must be positive");
    }
    if (!valid_dims(dims)) {
        throw InputError("feature dims must be positive");
    }
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(p_text_signal) || !prob(p_image_signal) || !prob(conflict_rate)) {
        throw InputError("signal and conflict probabilities must lie in [0,1]");
    }
    if (!(signal_strength > 0.0)) {
        throw InputError("signal_strength must be positive");
    }
    if (!(noise_std >= 0.0)) {
        throw InputError("noise_std must be non-negative");
    }
}

std::size_t signal_dims(std::size_t feature_dim) noexcept { return (feature_dim + 3) / 4; }

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    detail::Rng rng(spec.seed);

    std::vector<int> labels(spec.n_samples, 0);
    std::fill(labels.begin() + static_cast<std::ptrdiff_t>(spec.n_samples / 2), labels.end(), 1);
    rng.shuffle(labels);

    Dataset ds;
    ds.dims = spec.dims;
    ds.records.reserve(spec.n_samples);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        const int label = labels[i];
        const double sign = label == 1 ? 1.0 : -1.0;

        bool text_inf = rng.uniform() < spec.p_text_signal;
        bool image_inf = rng.uniform() < spec.p_image_signal;
        if (!text_inf && !image_inf) {
            text_inf = image_inf = true;
        }
        Provenance prov = text_inf && image_inf ? Provenance::BothInformative
                          : text_inf            ? Provenance::TextInformative
                                                : Provenance::ImageInformative;

        // Non-informative modality: pure noise, or the opposite class's signal.
        auto sign_for = [&](bool informative) {
            if (informative) return sign;
            return rng.uniform() < spec.conflict_rate ? -sign : 0.0;
        };
        const double text_sign = sign_for(text_inf);
        const double image_sign = sign_for(image_inf);

        FeatureRecord rec;
        char id[32];
        std::snprintf(id, sizeof id, "syn-%06zu", i);
        rec.id = id;
        rec.label = label;
        rec.provenance = prov;
        rec.text_features = draw_modality(rng, spec.dims.text_len, spec.dims.text_dim, text_sign, spec);
        rec.image_features = draw_modality(rng, spec.dims.image_len, spec.dims.image_dim, image_sign, spec);
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
    dataset.validate();
    detail::ByteWriter w;
    w.bytes(std::string_view(kMagic, 4));
    w.u32(kVersion);
    w.u64(dataset.records.size());
    w.u32(dataset.dims.text_dim);
    w.u32(dataset.dims.image_dim);
    w.u32(dataset.dims.text_len);
    w.u32(dataset.dims.image_len);
    for (const auto& r : dataset.records) {
        w.string(r.id);
        w.u8(static_cast<std::uint8_t>(r.label));
        w.u8(static_cast<std::uint8_t>(r.provenance));
        for (double v : r.text_features.values()) w.f64(v);
        for (double v : r.image_features.values()) w.f64(v);
    }
    return w.take();
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    detail::write_file_atomic(path, encode_dataset(dataset));
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
    using Kind = LoadError::Kind;
    detail::ByteReader r(bytes);
    if (r.remaining() < 4) {
        throw LoadError(Kind::Truncated, "truncated payload: file shorter than magic");
    }
    if (r.bytes(4) != std::string_view(kMagic, 4)) {
        throw LoadError(Kind::BadMagic, "bad magic: not an MMFN feature file");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw LoadError(Kind::VersionMismatch, "version mismatch: file has v" + std::to_string(version) +
                                                   ", reader supports v" + std::to_string(kVersion));
    }
    const std::uint64_t n = r.u64();
    Dataset ds;
    ds.dims.text_dim = r.u32();
    ds.dims.image_dim = r.u32();
    ds.dims.text_len = r.u32();
    ds.dims.image_len = r.u32();
    if (!valid_dims(ds.dims)) {
        throw LoadError(Kind::DimInconsistent, "dim inconsistency: header dims must be positive");
    }
    const std::size_t text_n = std::size_t{ds.dims.text_len} * ds.dims.text_dim;
    const std::size_t image_n = std::size_t{ds.dims.image_len} * ds.dims.image_dim;
    const std::size_t min_record = 4 + 1 + 1 + 8 * (text_n + image_n);
    if (n > r.remaining() / min_record) {
        throw LoadError(Kind::Truncated, "truncated payload: header claims " + std::to_string(n) +
                                             " records, file too short");
    }
    ds.records.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        FeatureRecord rec;
        rec.id = r.string();
        const std::uint8_t label = r.u8();
        const std::uint8_t prov = r.u8();
        if (label > 1) {
            throw LoadError(Kind::InvalidRecord, "invalid record " + rec.id + ": label " + std::to_string(label));
        }
        if (prov > 3) {
            throw LoadError(Kind::InvalidRecord,
                            "invalid record " + rec.id + ": provenance code " + std::to_string(prov));
        }
        rec.label = label;
        rec.provenance = static_cast<Provenance>(prov);
        std::vector<double> text(text_n);
        for (double& v : text) v = r.f64();
        std::vector<double> image(image_n);
        for (double& v : image) v = r.f64();
        rec.text_features = Matrix(ds.dims.text_len, ds.dims.text_dim, std::move(text));
        rec.image_features = Matrix(ds.dims.image_len, ds.dims.image_dim, std::move(image));
        ds.records.push_back(std::move(rec));
    }
    if (r.remaining() != 0) {
        throw LoadError(Kind::DimInconsistent, "dim inconsistency: " + std::to_string(r.remaining()) +
                                                   " trailing bytes after the last record");
    }
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(detail::read_file(path)); }

DatasetSplits split_dataset(const Dataset& dataset, const SplitFractions& fractions, std::uint64_t seed) {
    const double f[3] = {fractions.train, fractions.val, fractions.test};
    for (double x : f) {
        if (!(x >= 0.0)) throw InputError("split fractions must be non-negative");
    }
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
        throw InputError("split fractions must sum to 1");
    }

    detail::Rng rng(seed);
    std::vector<std::size_t> parts[3];
    for (int label = 0; label <= 1; ++label) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < dataset.records.size(); ++i) {
            if (dataset.records[i].label == label) idx.push_back(i);
        }
        rng.shuffle(idx);
        const auto n = static_cast<long long>(idx.size());
        const long long n_train = std::min(n, std::llround(f[0] * static_cast<double>(n)));
        const long long n_val = std::min(n - n_train, std::llround(f[1] * static_cast<double>(n)));
        const long long cuts[4] = {0, n_train, n_train + n_val, n};
        for (int s = 0; s < 3; ++s) {
            parts[s].insert(parts[s].end(), idx.begin() + cuts[s], idx.begin() + cuts[s + 1]);
        }
    }

    static constexpr const char* names[3] = {"train", "val", "test"};
    DatasetSplits out;
    Dataset* targets[3] = {&out.train, &out.val, &out.test};
    for (int s = 0; s < 3; ++s) {
        if (f[s] > 0.0 && parts[s].empty()) {
            throw InputError(std::string("split '") + names[s] + "' would be empty");
        }
        rng.shuffle(parts[s]);
        targets[s]->dims = dataset.dims;
        targets[s]->records.reserve(parts[s].size());
        for (std::size_t i : parts[s]) targets[s]->records.push_back(dataset.records[i]);
    }
    return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t epoch_seed) {
    if (batch_size == 0) {
        throw InputError("batch_size must be at least 1");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    detail::Rng rng(epoch_seed);
    rng.shuffle(order);

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace mmfusion
