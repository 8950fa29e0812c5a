// SPDX-License-Identifier: Apache-2.0
#include "evomoe/checkpoint.hpp"

#include "evomoe/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace evomoe {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'V', 'M', 'O'};

class Writer {
public:
    template <class T>
    void pod(T v)
    {
        const auto* p = reinterpret_cast<const char*>(&v);
        out_.insert(out_.end(), p, p + sizeof v);
    }
    void str(const std::string& s)
    {
        pod<std::uint64_t>(s.size());
        out_.insert(out_.end(), s.begin(), s.end());
    }
    void doubles(std::span<const double> v)
    {
        const auto* p = reinterpret_cast<const char*>(v.data());
        out_.insert(out_.end(), p, p + v.size() * sizeof(double));
    }
    void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
    std::vector<char> take() { return std::move(out_); }

private:
    std::vector<char> out_;
};

class Reader {
public:
    explicit Reader(const std::vector<char>& in) : in_(in) {}

    void need(std::size_t n, const char* what) const
    {
        if (in_.size() - pos_ < n)
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    template <class T>
    T pod(const char* what)
    {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }
    std::uint64_t count(const char* what, std::size_t elem_size)
    {
        const auto n = pod<std::uint64_t>(what);
        // Reject lengths the remaining bytes cannot hold before allocating.
        if (elem_size > 0 && n > (in_.size() - pos_) / elem_size)
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
        return n;
    }
    std::string str(const char* what)
    {
        const auto n = count(what, 1);
        std::string s(in_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<double> doubles(std::size_t n, const char* what)
    {
        if (n > (in_.size() - pos_) / sizeof(double))
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
        std::vector<double> v(n);
        std::memcpy(v.data(), in_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    const std::vector<char>& in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> serialize(const TrainState& s)
{
    Writer w;
    w.raw(kMagic, 4);
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.str(to_json(s.config));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.stage));
    w.pod<std::uint64_t>(s.step);
    w.pod<std::uint8_t>(s.model.is_moe() ? 1 : 0);
    w.pod<std::uint64_t>(s.beta_rng.seed());
    w.pod<std::uint64_t>(s.beta_rng.stream());
    w.pod<std::uint64_t>(s.beta_rng.counter());
    const auto params = parameters(s.model);
    w.pod<std::uint64_t>(params.size());
    for (const auto& p : params) {
        w.str(p.name);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
        for (std::size_t d : p.tensor.shape())
            w.pod<std::uint64_t>(d);
        w.doubles(p.tensor.data());
    }
    w.pod<std::uint64_t>(s.adam.t);
    w.pod<std::uint64_t>(s.adam.m.size());
    for (const auto& [name, m] : s.adam.m) {
        const auto& v = s.adam.v.at(name);
        w.str(name);
        w.pod<std::uint64_t>(m.size());
        w.doubles(m);
        w.doubles(v);
    }
    return w.take();
}

TrainState deserialize(const std::vector<char>& bytes)
{
    Reader r(bytes);
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("not a checkpoint: bad magic bytes");
    r.pod<std::uint32_t>("magic");
    const auto version = r.pod<std::uint32_t>("version");
    if (version > kCheckpointVersion)
        throw VersionError("checkpoint version " + std::to_string(version) + " is newer than supported version " +
                           std::to_string(kCheckpointVersion));
    if (version == 0)
        throw FormatError("checkpoint version 0 is invalid");

    TrainState s;
    s.config = parse_config(r.str("config"));
    const auto stage = r.pod<std::uint32_t>("stage");
    if (stage < 1 || stage > 3)
        throw FormatError("checkpoint stage tag " + std::to_string(stage) + " is not 1, 2 or 3");
    s.stage = static_cast<int>(stage);
    s.step = r.pod<std::uint64_t>("step");
    const bool sparse = r.pod<std::uint8_t>("layout flag") != 0;
    const auto rs = r.pod<std::uint64_t>("rng");
    const auto rst = r.pod<std::uint64_t>("rng");
    const auto rc = r.pod<std::uint64_t>("rng");
    s.beta_rng = Rng(rs, rst);
    s.beta_rng.set_counter(rc);

    // Rebuild the skeleton, then fill every array by name with a shape check.
    TrainState skeleton = start_training(s.config);
    if (sparse)
        transition_to_moe(skeleton);
    s.model = std::move(skeleton.model);
    std::map<std::string, Tensor> slots;
    for (const auto& p : parameters(s.model))
        slots.emplace(p.name, p.tensor);

    const auto n = r.count("parameter count", 1);
    std::map<std::string, std::vector<double>> loaded;
    for (std::uint64_t i = 0; i < n; ++i) {
        auto name = r.str("parameter name");
        const auto rank = r.pod<std::uint32_t>("parameter rank");
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d)
            shape.push_back(r.pod<std::uint64_t>("parameter shape"));
        auto it = slots.find(name);
        if (it == slots.end())
            throw ConfigError("checkpoint holds parameter '" + name + "' that the configured model lacks");
        if (it->second.shape() != shape)
            throw ConfigError("parameter '" + name + "' has shape " + shape_str(shape) +
                              " in the checkpoint but " + shape_str(it->second.shape()) + " in the model");
        loaded[name] = r.doubles(shape_size(shape), "parameter data");
    }
    if (loaded.size() != slots.size())
        throw ConfigError("checkpoint holds " + std::to_string(loaded.size()) + " parameter arrays, the model needs " +
                          std::to_string(slots.size()));

    s.adam.t = r.pod<std::uint64_t>("optimizer step");
    const auto m = r.count("optimizer entries", 1);
    for (std::uint64_t i = 0; i < m; ++i) {
        auto name = r.str("optimizer name");
        const auto len = r.count("optimizer length", 2 * sizeof(double));
        s.adam.m[name] = r.doubles(len, "optimizer moments");
        s.adam.v[name] = r.doubles(len, "optimizer moments");
    }
    if (!r.done())
        throw FormatError("trailing bytes after checkpoint payload");

    // Only now, with the whole file validated, copy the arrays into the model.
    for (auto& [name, values] : loaded) {
        auto dst = slots.at(name).data();
        std::copy(values.begin(), values.end(), dst.begin());
    }
    apply_stage_mask(s.model, s.config, s.stage);
    return s;
}

std::vector<char> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open '" + path + "'");
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw FormatError("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw FormatError("short write to '" + path + "'");
}

void save_checkpoint(const std::string& path, const TrainState& state) { write_file(path, serialize(state)); }

TrainState load_checkpoint(const std::string& path) { return deserialize(read_file(path)); }

void check_compatible(const RunConfig& expected, const RunConfig& found, bool sparse)
{
    const auto& a = expected.model;
    const auto& b = found.model;
    // A dense checkpoint fixes only the backbone; the expert and router
    // settings take effect at the transition.
    const bool backbone_equal = a.vocab_size == b.vocab_size && a.d_model == b.d_model &&
                                a.n_layers == b.n_layers && a.n_heads == b.n_heads &&
                                a.ffn_hidden == b.ffn_hidden && a.max_seq_len == b.max_seq_len;
    if (!backbone_equal || (sparse && !(a == b)))
        throw ConfigError("checkpoint model configuration differs from the requested one");
    if (!(expected.task == found.task))
        throw ConfigError("checkpoint task configuration differs from the requested one");
}

}  // namespace evomoe
