#include "mialab/nn/container.hpp"

#include <bit>
#include <cstring>

#include "mialab/fsutil.hpp"

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

namespace mialab::nn {

namespace {

template <typename U>
void put_raw(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U raw() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string str(size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::kData, "truncated checkpoint");
  }
  const std::string& bytes_;
  size_t pos_ = 0;
};

}  // namespace

const NamedArray& Container::at(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) fail(ErrorKind::kData, "checkpoint has no array named " + name);
  return it->second;
}

std::string serialize(const Container& c) {
  std::string out(kContainerMagic, sizeof kContainerMagic);
  put_raw<uint64_t>(out, c.arrays.size());
  for (const auto& [name, a] : c.arrays) {
    put_raw<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_raw<uint32_t>(out, static_cast<uint32_t>(a.shape.size()));
    for (auto d : a.shape) put_raw<uint64_t>(out, static_cast<uint64_t>(d));
    put_raw<uint8_t>(out, kDtypeF32);
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
  }
  std::string meta = c.meta.dump();
  put_raw<uint64_t>(out, meta.size());
  out += meta;
  return out;
}

Container deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(sizeof kContainerMagic) != std::string(kContainerMagic, sizeof kContainerMagic))
    fail(ErrorKind::kData, "bad checkpoint magic");
  Container c;
  const auto count = r.raw<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    auto name = r.str(r.raw<uint32_t>());
    NamedArray a;
    const auto rank = r.raw<uint32_t>();
    size_t n = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      a.shape.push_back(static_cast<int64_t>(r.raw<uint64_t>()));
      n *= static_cast<size_t>(a.shape.back());
    }
    if (r.raw<uint8_t>() != kDtypeF32) fail(ErrorKind::kData, "unsupported dtype for " + name);
    auto payload = r.str(n * sizeof(float));
    a.data.resize(n);
    std::memcpy(a.data.data(), payload.data(), payload.size());
    c.arrays.emplace(std::move(name), std::move(a));
  }
  auto meta = r.str(r.raw<uint64_t>());
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("bad checkpoint metadata: ") + e.what());
  }
  return c;
}

void save(const std::filesystem::path& path, const Container& c) { write_file_atomic(path, serialize(c)); }

Container load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace mialab::nn
