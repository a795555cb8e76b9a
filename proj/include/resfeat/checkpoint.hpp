#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "resfeat/error.hpp"
#include "resfeat/network.hpp"

namespace resfeat {

// Checkpoint container, little-endian throughout:
//   magic "RFT1" | version u32 | entry count u32
//   per entry: name len u16 | name bytes | dtype u8 (0 = f32) | rank u8 |
//              dims u32[rank] | raw values
// Shared kernels appear once under their canonical name; the builder's
// sharing table re-establishes the references on load.

namespace ckpt_detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::uint8_t* p;
  const std::uint8_t* end;

  void need(std::size_t k, const char* what) const {
    if (static_cast<std::size_t>(end - p) < k)
      throw IoError(std::string("checkpoint truncated reading ") + what);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return *p++;
  }
  float f32(const char* what) {
    std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

struct Entry {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

inline void append_entry(std::string& out, std::uint32_t& count, const std::string& name,
                         const std::vector<std::uint32_t>& dims, const float* values,
                         std::size_t n) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  out.push_back(0);  // dtype code 0 = 32-bit float
  out.push_back(static_cast<char>(dims.size()));
  for (auto d : dims) put_u32(out, d);
  for (std::size_t i = 0; i < n; ++i) put_f32(out, values[i]);
  ++count;
}

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const Model<float>& m) {
  using namespace ckpt_detail;
  std::string body;
  std::uint32_t count = 0;
  for (const auto& k : m.store.kernels()) {
    append_entry(body, count, k->name,
                 {static_cast<std::uint32_t>(k->c_out), static_cast<std::uint32_t>(k->c_in),
                  static_cast<std::uint32_t>(k->kh), static_cast<std::uint32_t>(k->kw)},
                 k->values.data(), k->values.size());
    if (k->has_bias())
      append_entry(body, count, k->name + ".bias", {static_cast<std::uint32_t>(k->c_out)},
                   k->bias.data(), k->bias.size());
  }
  for (const auto& b : m.store.bns()) {
    const std::uint32_t c = static_cast<std::uint32_t>(b->channels);
    append_entry(body, count, b->name + ".gamma", {c}, b->gamma.data(), b->gamma.size());
    append_entry(body, count, b->name + ".beta", {c}, b->beta.data(), b->beta.size());
    append_entry(body, count, b->name + ".running_mean", {c}, b->running_mean.data(),
                 b->running_mean.size());
    append_entry(body, count, b->name + ".running_var", {c}, b->running_var.data(),
                 b->running_var.size());
  }
  for (const auto& d : m.store.denses()) {
    append_entry(body, count, d->name + ".W",
                 {static_cast<std::uint32_t>(d->out_dim), static_cast<std::uint32_t>(d->in_dim)},
                 d->weights.data(), d->weights.size());
    append_entry(body, count, d->name + ".b", {static_cast<std::uint32_t>(d->out_dim)},
                 d->bias.data(), d->bias.size());
  }
  std::string out = "RFT1";
  put_u32(out, 1);  // version
  put_u32(out, count);
  out += body;
  return out;
}

inline void save_checkpoint(const Model<float>& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  const std::string blob = serialize_checkpoint(m);
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

inline std::map<std::string, ckpt_detail::Entry> parse_checkpoint(const std::vector<std::uint8_t>& blob) {
  using namespace ckpt_detail;
  Reader r{blob.data(), blob.data() + blob.size()};
  r.need(4, "magic");
  if (std::memcmp(r.p, "RFT1", 4) != 0) throw IoError("checkpoint magic mismatch (want RFT1)");
  r.p += 4;
  const std::uint32_t version = r.u32("version");
  if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32("entry count");
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t nlen = r.u16("name length");
    r.need(nlen, "name");
    std::string name(reinterpret_cast<const char*>(r.p), nlen);
    r.p += nlen;
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != 0) throw IoError("entry '" + name + "': unsupported dtype code");
    const std::uint8_t rank = r.u8("rank");
    Entry e;
    std::size_t total = 1;
    for (int d = 0; d < rank; ++d) {
      e.dims.push_back(r.u32("dim"));
      total *= e.dims.back();
    }
    e.values.resize(total);
    for (std::size_t v = 0; v < total; ++v) e.values[v] = r.f32("values");
    entries.emplace(std::move(name), std::move(e));
  }
  return entries;
}

inline void load_checkpoint(Model<float>& m, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  auto entries = parse_checkpoint(blob);

  std::size_t used = 0;
  auto take = [&entries, &used, &path](const std::string& name,
                                       const std::vector<std::uint32_t>& dims) -> const std::vector<float>& {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint " + path + " missing entry '" + name + "'");
    if (it->second.dims != dims) throw IoError("checkpoint entry '" + name + "' has wrong shape");
    ++used;
    return it->second.values;
  };

  for (auto& k : m.store.kernels()) {
    k->values = take(k->name, {static_cast<std::uint32_t>(k->c_out),
                               static_cast<std::uint32_t>(k->c_in),
                               static_cast<std::uint32_t>(k->kh),
                               static_cast<std::uint32_t>(k->kw)});
    if (k->has_bias()) k->bias = take(k->name + ".bias", {static_cast<std::uint32_t>(k->c_out)});
  }
  for (auto& b : m.store.bns()) {
    const std::uint32_t c = static_cast<std::uint32_t>(b->channels);
    b->gamma = take(b->name + ".gamma", {c});
    b->beta = take(b->name + ".beta", {c});
    b->running_mean = take(b->name + ".running_mean", {c});
    b->running_var = take(b->name + ".running_var", {c});
  }
  for (auto& d : m.store.denses()) {
    d->weights = take(d->name + ".W", {static_cast<std::uint32_t>(d->out_dim),
                                       static_cast<std::uint32_t>(d->in_dim)});
    d->bias = take(d->name + ".b", {static_cast<std::uint32_t>(d->out_dim)});
  }
  if (used != entries.size())
    throw IoError("checkpoint " + path + " holds " + std::to_string(entries.size() - used) +
                  " entries the model does not expect");
}

}  // namespace resfeat
