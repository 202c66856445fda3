#pragma once

// Named, segmented parameter storage with Adam state and a fixed on-disk
// checkpoint format.
//
// Parameters live in named segments ("encoder", "decoder", "scoring"); each
// parameter is a dense matrix addressed by a stable ParamId. Gradients travel
// in a GradientMap aligned with the store, so an optimizer step is a pure
// function of (store, gradients, options).

#include "plmarl/common.hpp"
#include "plmarl/fs_util.hpp"

#include <Eigen/QR>

#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <string>

namespace plmarl::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

struct ParamId {
    int uid = -1;
    bool valid() const { return uid >= 0; }
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointVersionError : CheckpointError {
    explicit CheckpointVersionError(unsigned found)
        : CheckpointError("checkpoint version " + std::to_string(found) + " is not supported"),
          found_version(found) {}
    unsigned found_version;
};

inline constexpr char kCheckpointMagic[8] = {'P', 'M', 'A', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class Scalar>
class ParameterStore {
public:
    int add_segment(const std::string& name) {
        segments_.push_back(name);
        return static_cast<int>(segments_.size()) - 1;
    }

    ParamId add(int segment, const std::string& name, int rows, int cols) {
        if (segment < 0 || segment >= static_cast<int>(segments_.size()))
            throw std::invalid_argument("ParameterStore::add: unknown segment");
        Entry e;
        e.segment = segment;
        e.name = name;
        e.value = Matrix<Scalar>::Zero(rows, cols);
        entries_.push_back(std::move(e));
        const int uid = static_cast<int>(entries_.size()) - 1;
        const std::string q = qualified_name(ParamId{uid});
        if (!by_name_.emplace(q, uid).second)
            throw std::invalid_argument("ParameterStore::add: duplicate parameter " + q);
        return ParamId{uid};
    }

    Matrix<Scalar>& value(ParamId id) { return entry(id).value; }
    const Matrix<Scalar>& value(ParamId id) const { return entry(id).value; }
    int segment_of(ParamId id) const { return entry(id).segment; }

    std::string qualified_name(ParamId id) const {
        const Entry& e = entry(id);
        return segments_[static_cast<std::size_t>(e.segment)] + "/" + e.name;
    }

    int count() const { return static_cast<int>(entries_.size()); }
    int segment_count() const { return static_cast<int>(segments_.size()); }
    const std::string& segment_name(int s) const { return segments_.at(static_cast<std::size_t>(s)); }

    std::int64_t scalar_count() const {
        std::int64_t n = 0;
        for (const Entry& e : entries_) n += e.value.size();
        return n;
    }

    ParamId find(const std::string& qualified) const {
        auto it = by_name_.find(qualified);
        return it == by_name_.end() ? ParamId{} : ParamId{it->second};
    }

    std::int64_t step_count() const { return step_count_; }

    // ----- Adam -----

    struct AdamOptions {
        double lr = 5e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-5;
        double max_grad_norm = 0.0;          // <= 0 disables clipping
        std::vector<double> segment_lr;      // optional per-segment learning rates
    };

    struct AdamStats {
        double grad_norm = 0.0;   // global norm before any clipping
        double clip_scale = 1.0;  // factor applied to all gradients
    };

    template <class GradMap>
    AdamStats adam_step(GradMap& grads, const AdamOptions& opt) {
        AdamStats stats;
        stats.grad_norm = grads.global_norm();
        if (opt.max_grad_norm > 0.0 && stats.grad_norm > opt.max_grad_norm) {
            stats.clip_scale = opt.max_grad_norm / stats.grad_norm;
            grads.scale(static_cast<Scalar>(stats.clip_scale));
        }
        const std::int64_t t = ++step_count_;
        const Scalar b1 = static_cast<Scalar>(opt.beta1), b2 = static_cast<Scalar>(opt.beta2);
        const Scalar bc1 = Scalar(1) - static_cast<Scalar>(std::pow(opt.beta1, static_cast<double>(t)));
        const Scalar bc2 = Scalar(1) - static_cast<Scalar>(std::pow(opt.beta2, static_cast<double>(t)));
        for (int uid = 0; uid < count(); ++uid) {
            Entry& e = entries_[static_cast<std::size_t>(uid)];
            const Matrix<Scalar>& g = grads.of(ParamId{uid});
            if (e.m.size() == 0) {
                e.m = Matrix<Scalar>::Zero(e.value.rows(), e.value.cols());
                e.v = Matrix<Scalar>::Zero(e.value.rows(), e.value.cols());
            }
            e.m = b1 * e.m + (Scalar(1) - b1) * g;
            e.v = b2 * e.v + (Scalar(1) - b2) * g.cwiseProduct(g);
            double lr = opt.lr;
            if (!opt.segment_lr.empty()) lr = opt.segment_lr.at(static_cast<std::size_t>(e.segment));
            const Scalar step = static_cast<Scalar>(lr);
            e.value -= step * (e.m / bc1).cwiseQuotient(
                                  ((e.v / bc2).cwiseSqrt().array() + static_cast<Scalar>(opt.eps))
                                      .matrix());
        }
        return stats;
    }

    // ----- checkpoint io -----

    std::string serialize() const {
        std::string out;
        out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
        append_u32(out, kCheckpointVersion);
        append_u32(out, static_cast<std::uint32_t>(entries_.size()));
        for (int uid = 0; uid < count(); ++uid) {
            const Entry& e = entries_[static_cast<std::size_t>(uid)];
            const std::string name = qualified_name(ParamId{uid});
            append_u32(out, static_cast<std::uint32_t>(name.size()));
            out.append(name);
            append_u32(out, 2u);
            append_u32(out, static_cast<std::uint32_t>(e.value.rows()));
            append_u32(out, static_cast<std::uint32_t>(e.value.cols()));
            for (Eigen::Index r = 0; r < e.value.rows(); ++r)
                for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
                    const float f = static_cast<float>(e.value(r, c));
                    char buf[4];
                    std::memcpy(buf, &f, 4);
                    out.append(buf, 4);
                }
        }
        return out;
    }

    void save(const std::filesystem::path& path) const {
        fsutil::write_file_atomic(path, serialize());
    }

    // Populate values from checkpoint bytes. Every record must match an
    // existing parameter in name and shape, and cover the store exactly.
    void deserialize(const std::string& bytes) {
        std::size_t pos = 0;
        auto need = [&](std::size_t n) {
            if (pos + n > bytes.size()) throw CheckpointError("checkpoint truncated");
        };
        need(sizeof(kCheckpointMagic));
        if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
            throw CheckpointError("bad checkpoint magic");
        pos += sizeof(kCheckpointMagic);
        const std::uint32_t version = read_u32(bytes, pos, need);
        if (version != kCheckpointVersion) throw CheckpointVersionError(version);
        const std::uint32_t n_records = read_u32(bytes, pos, need);
        if (n_records != static_cast<std::uint32_t>(count()))
            throw CheckpointError("checkpoint holds " + std::to_string(n_records) +
                                  " parameters, expected " + std::to_string(count()));
        for (std::uint32_t rec = 0; rec < n_records; ++rec) {
            const std::uint32_t name_len = read_u32(bytes, pos, need);
            need(name_len);
            const std::string name = bytes.substr(pos, name_len);
            pos += name_len;
            const std::uint32_t rank = read_u32(bytes, pos, need);
            if (rank != 2u) throw CheckpointError("unsupported tensor rank in checkpoint");
            const std::uint32_t rows = read_u32(bytes, pos, need);
            const std::uint32_t cols = read_u32(bytes, pos, need);
            ParamId id = find(name);
            if (!id.valid()) throw CheckpointError("checkpoint names unknown parameter " + name);
            Matrix<Scalar>& dst = value(id);
            if (dst.rows() != static_cast<Eigen::Index>(rows) ||
                dst.cols() != static_cast<Eigen::Index>(cols))
                throw CheckpointError("shape mismatch for parameter " + name);
            need(std::size_t(4) * rows * cols);
            for (std::uint32_t r = 0; r < rows; ++r)
                for (std::uint32_t c = 0; c < cols; ++c) {
                    float f;
                    std::memcpy(&f, bytes.data() + pos, 4);
                    pos += 4;
                    dst(r, c) = static_cast<Scalar>(f);
                }
        }
        if (pos != bytes.size()) throw CheckpointError("trailing bytes in checkpoint");
    }

    void load(const std::filesystem::path& path) { deserialize(fsutil::read_file(path)); }

private:
    struct Entry {
        int segment = 0;
        std::string name;
        Matrix<Scalar> value, m, v;
    };

    Entry& entry(ParamId id) {
        if (!id.valid() || id.uid >= count()) throw std::invalid_argument("ParameterStore: bad ParamId");
        return entries_[static_cast<std::size_t>(id.uid)];
    }
    const Entry& entry(ParamId id) const {
        if (!id.valid() || id.uid >= count()) throw std::invalid_argument("ParameterStore: bad ParamId");
        return entries_[static_cast<std::size_t>(id.uid)];
    }

    static void append_u32(std::string& out, std::uint32_t v) {
        char buf[4];
        std::memcpy(buf, &v, 4);
        out.append(buf, 4);
    }

    template <class Need>
    static std::uint32_t read_u32(const std::string& bytes, std::size_t& pos, Need need) {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    }

    std::vector<Entry> entries_;
    std::vector<std::string> segments_;
    std::map<std::string, int> by_name_;
    std::int64_t step_count_ = 0;
};

// Dense gradient container aligned with a ParameterStore: one matrix per
// parameter, zero-filled, so parameters the loss never reached contribute
// exact zeros to the update.
template <class Scalar>
class GradientMap {
public:
    explicit GradientMap(const ParameterStore<Scalar>& store) {
        grads_.reserve(static_cast<std::size_t>(store.count()));
        for (int uid = 0; uid < store.count(); ++uid) {
            const auto& v = store.value(ParamId{uid});
            grads_.push_back(Matrix<Scalar>::Zero(v.rows(), v.cols()));
        }
    }

    Matrix<Scalar>& of(ParamId id) { return grads_.at(static_cast<std::size_t>(id.uid)); }
    const Matrix<Scalar>& of(ParamId id) const { return grads_.at(static_cast<std::size_t>(id.uid)); }

    void add(ParamId id, const Matrix<Scalar>& g) {
        Matrix<Scalar>& dst = of(id);
        if (dst.rows() != g.rows() || dst.cols() != g.cols())
            throw std::invalid_argument("GradientMap::add: shape mismatch");
        dst += g;
    }

    void set_zero() {
        for (auto& g : grads_) g.setZero();
    }

    double global_norm() const {
        double sq = 0.0;
        for (const auto& g : grads_) sq += static_cast<double>(g.template cast<double>().squaredNorm());
        return std::sqrt(sq);
    }

    void scale(Scalar s) {
        for (auto& g : grads_) g *= s;
    }

    int count() const { return static_cast<int>(grads_.size()); }

private:
    std::vector<Matrix<Scalar>> grads_;
};

// Orthogonal initialisation: QR of a Gaussian matrix with sign-corrected
// diagonal, scaled by gain. Falls back to the transposed factorisation when
// rows < cols so the rows are orthonormal instead.
template <class Scalar>
Matrix<Scalar> orthogonal_init(int rows, int cols, double gain, RandomSource& rng) {
    const bool tall = rows >= cols;
    const int r = tall ? rows : cols, c = tall ? cols : rows;
    Eigen::MatrixXd a(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) a(i, j) = rng.gaussian();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
    Eigen::MatrixXd rmat = qr.matrixQR().topRows(c).template triangularView<Eigen::Upper>();
    for (int j = 0; j < c; ++j)
        if (rmat(j, j) < 0) q.col(j) = -q.col(j);
    Eigen::MatrixXd result = tall ? q : Eigen::MatrixXd(q.transpose());
    return (gain * result).cast<Scalar>();
}

}  // namespace plmarl::nn
