#include "rtsmono/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace rtsmono {

namespace {

constexpr char kMagic[8] = {'R', 'T', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint64_t kMaxRank = 8;

template <typename U>
void put(std::string& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path) : d_(data), path_(path) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(d_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(path_ + ": " + msg + " at byte " + std::to_string(pos_));
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return d_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) fail(std::string("truncated archive while reading ") + what);
  }
  const std::string& d_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

ArchiveEntry ArchiveEntry::from_tensor(std::string name, const Tensor<float>& t) {
  ArchiveEntry e;
  e.name = std::move(name);
  e.dtype = Dtype::F32;
  e.shape = t.shape();
  e.f32.assign(t.ptr(), t.ptr() + t.size());
  return e;
}

ArchiveEntry ArchiveEntry::from_bytes(std::string name, const std::string& bytes) {
  ArchiveEntry e;
  e.name = std::move(name);
  e.dtype = Dtype::U8;
  e.shape = {static_cast<std::int64_t>(bytes.size())};
  e.u8.assign(bytes.begin(), bytes.end());
  return e;
}

Tensor<float> ArchiveEntry::tensor() const {
  if (dtype != Dtype::F32) throw std::runtime_error("archive entry " + name + " is not a float tensor");
  Tensor<float> t(shape);
  std::copy(f32.begin(), f32.end(), t.ptr());
  return t;
}

void write_archive(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    const std::int64_t n = numel(e.shape);
    const std::size_t have = e.dtype == ArchiveEntry::Dtype::F32 ? e.f32.size() : e.u8.size();
    if (static_cast<std::size_t>(n) != have) {
      throw std::invalid_argument("archive entry " + e.name + ": shape does not match data");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  }
  for (const auto& e : entries) {
    if (e.dtype == ArchiveEntry::Dtype::F32) {
      for (float v : e.f32) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    } else {
      out.append(e.u8.begin(), e.u8.end());
    }
  }
  // Write to a sibling file first so an interrupted save never leaves a partial archive.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<ArchiveEntry> read_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(data, path.string());
  if (r.bytes(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) r.fail("bad magic");
  const auto count = r.get<std::uint32_t>("record count");
  std::vector<ArchiveEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    const auto len = r.get<std::uint32_t>("name length");
    e.name = r.bytes(len, "name");
    const auto tag = r.get<std::uint8_t>("dtype tag");
    if (tag > 1) r.fail("unknown dtype tag " + std::to_string(tag) + " for " + e.name);
    e.dtype = static_cast<ArchiveEntry::Dtype>(tag);
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > kMaxRank) r.fail("implausible rank " + std::to_string(rank) + " for " + e.name);
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("dims");
      if (d > (1ULL << 40)) r.fail("implausible dimension for " + e.name);
      e.shape.push_back(static_cast<std::int64_t>(d));
    }
    entries.push_back(std::move(e));
  }
  for (auto& e : entries) {
    const auto n = static_cast<std::size_t>(numel(e.shape));
    if (e.dtype == ArchiveEntry::Dtype::F32) {
      if (r.remaining() / 4 < n) r.fail("payload shorter than manifest for " + e.name);
      e.f32.resize(n);
      for (auto& v : e.f32) v = std::bit_cast<float>(r.get<std::uint32_t>("payload"));
    } else {
      const std::string b = r.bytes(n, "payload");
      e.u8.assign(b.begin(), b.end());
    }
  }
  if (r.remaining() != 0) r.fail("payload longer than manifest");
  return entries;
}

}  // namespace rtsmono
