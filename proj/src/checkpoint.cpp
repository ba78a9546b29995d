#include "sparseconv/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sparseconv {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'S', 'P', 'C', 'N', 'V', 'C', 'K', 'P'};

class Writer {
   public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    void bytes(const void* data, std::size_t size) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    }
    template <typename T>
    void pod(T value) {
        bytes(&value, sizeof value);
    }
    void string(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void finish(const std::filesystem::path& path) {
        out_.flush();
        if (!out_) throw std::runtime_error("write to '" + path.string() + "' failed");
    }

   private:
    std::ofstream out_;
};

class Reader {
   public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    }
    void bytes(void* data, std::size_t size) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
        if (!in_) throw std::runtime_error("checkpoint '" + path_.string() + "' is truncated");
    }
    template <typename T>
    T pod() {
        T value{};
        bytes(&value, sizeof value);
        return value;
    }
    std::string string() {
        const auto size = pod<std::uint32_t>();
        if (size > (1u << 20)) throw std::runtime_error("checkpoint string length is implausible");
        std::string s(size, '\0');
        bytes(s.data(), size);
        return s;
    }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

   private:
    std::filesystem::path path_;
    std::ifstream in_;
};

}  // namespace

void Checkpoint::set_meta(const std::string& key, std::string value) {
    for (auto& [k, v] : meta) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    meta.emplace_back(key, std::move(value));
}

std::optional<std::string> Checkpoint::get_meta(const std::string& key) const {
    for (const auto& [k, v] : meta) {
        if (k == key) return v;
    }
    return std::nullopt;
}

std::string Checkpoint::require_meta(const std::string& key) const {
    auto v = get_meta(key);
    if (!v) throw std::runtime_error("checkpoint is missing metadata '" + key + "'");
    return *v;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

const Tensor& Checkpoint::require(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    return *t;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Writer w(path);
    w.bytes(kMagic.data(), kMagic.size());
    w.pod(Checkpoint::kFormatVersion);
    w.pod(static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        w.string(k);
        w.string(v);
    }
    w.pod(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        w.string(name);
        w.pod(static_cast<std::uint8_t>(t.dtype() == DType::f32 ? 0 : 1));
        const Shape& s = t.shape();
        for (std::int64_t e : {s.n, s.c, s.h, s.w}) w.pod(e);
        dispatch(t.dtype(), [&]<typename T>() {
            auto v = t.values<T>();
            w.bytes(v.data(), v.size_bytes());
        });
    }
    w.finish(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    Reader r(path);
    std::array<char, 8> magic{};
    r.bytes(magic.data(), magic.size());
    if (magic != kMagic) throw std::runtime_error("'" + path.string() + "' is not a checkpoint");
    const auto version = r.pod<std::uint32_t>();
    if (version != Checkpoint::kFormatVersion) {
        throw std::runtime_error("unsupported checkpoint format version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const auto meta_count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        std::string k = r.string();
        std::string v = r.string();
        ckpt.meta.emplace_back(std::move(k), std::move(v));
    }
    const auto tensor_count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        std::string name = r.string();
        const auto code = r.pod<std::uint8_t>();
        if (code > 1) throw std::runtime_error("tensor '" + name + "' has unknown dtype code");
        Shape s;
        s.n = r.pod<std::int64_t>();
        s.c = r.pod<std::int64_t>();
        s.h = r.pod<std::int64_t>();
        s.w = r.pod<std::int64_t>();
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 || s.numel() > (std::int64_t{1} << 32)) {
            throw std::runtime_error("tensor '" + name + "' has an invalid shape");
        }
        Tensor t(s, code == 0 ? DType::f32 : DType::f64);
        dispatch(t.dtype(), [&]<typename T>() {
            auto v = t.values<T>();
            r.bytes(v.data(), v.size_bytes());
        });
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (!r.at_end()) throw std::runtime_error("checkpoint has trailing bytes");
    return ckpt;
}

std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace sparseconv
