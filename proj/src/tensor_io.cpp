// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include "salkv/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "salkv/errors.hpp"

namespace salkv {

namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i]))
         << (8 * i);
  }
  return v;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::string encode_tensor(const Tensor& t) {
  std::string out(kTensorMagic, 4);
  put_u32(out, kTensorVersion);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw ShapeError("dimension too large for the tensor file format");
    }
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.size());
  for (double x : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  return out;
}

Tensor decode_tensor(std::string_view bytes) {
  auto need = [&](std::size_t off, std::size_t n, const char* what) {
    if (bytes.size() < off + n) {
      throw FormatError("truncated " + std::string(what) + " at byte " +
                        std::to_string(bytes.size()) + " (need " +
                        std::to_string(off + n) + ")");
    }
  };
  need(0, 4, "magic");
  if (std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    throw FormatError("bad magic at byte 0");
  }
  need(4, 4, "version");
  if (get_u32(bytes, 4) != kTensorVersion) {
    throw FormatError("unsupported version " + std::to_string(get_u32(bytes, 4)) +
                      " at byte 4");
  }
  need(8, 4, "ndim");
  const std::uint32_t ndim = get_u32(bytes, 8);
  need(12, 4 * static_cast<std::size_t>(ndim), "dims");
  std::vector<std::size_t> shape(ndim);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    shape[i] = get_u32(bytes, 12 + 4 * i);
    if (shape[i] != 0 && count > std::numeric_limits<std::size_t>::max() / 4 / shape[i]) {
      throw FormatError("dims overflow at byte " + std::to_string(12 + 4 * i));
    }
    count *= shape[i];
  }
  const std::size_t payload = 12 + 4 * static_cast<std::size_t>(ndim);
  need(payload, 4 * count, "payload");
  if (bytes.size() != payload + 4 * count) {
    throw FormatError("trailing data at byte " + std::to_string(payload + 4 * count));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = std::bit_cast<float>(get_u32(bytes, payload + 4 * i));
  }
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const fs::path& path, const Tensor& t) {
  write_file(path, encode_tensor(t));
}

Tensor read_tensor(const fs::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_seh_checkpoint(const fs::path& dir, const SehParams& params,
                         std::uint64_t seed) {
  params.validate();
  fs::create_directories(dir);
  write_tensor(dir / "w1.pfkv", params.w1);
  write_tensor(dir / "b1.pfkv", params.b1);
  write_tensor(dir / "w2.pfkv", params.w2);
  write_tensor(dir / "b2.pfkv", params.b2);
  const SehDims d = params.dims();
  nlohmann::ordered_json meta;
  meta["d_in"] = d.d_in;
  meta["d_hidden"] = d.d_hidden;
  meta["d_out"] = d.d_out;
  meta["seed"] = seed;
  write_file(dir / "meta.json", meta.dump(2) + "\n");
}

SehParams load_seh_checkpoint(const fs::path& dir) {
  SehParams p{read_tensor(dir / "w1.pfkv"), read_tensor(dir / "b1.pfkv"),
              read_tensor(dir / "w2.pfkv"), read_tensor(dir / "b2.pfkv")};
  p.validate();
  const nlohmann::json meta = read_json(dir / "meta.json");
  const SehDims d = p.dims();
  if (meta.value("d_in", 0u) != d.d_in || meta.value("d_hidden", 0u) != d.d_hidden ||
      meta.value("d_out", 0u) != d.d_out) {
    throw FormatError(dir.string() + ": meta.json dims disagree with tensors");
  }
  return p;
}

void save_cache_snapshot(const fs::path& dir, const KvCache& cache) {
  fs::create_directories(dir);
  const Selection sel = cache.select();
  write_tensor(dir / "keys.pfkv", sel.keys);
  write_tensor(dir / "values.pfkv", sel.values);
  const CacheConfig& c = cache.config();
  nlohmann::ordered_json j;
  j["policy"] = std::string(to_string(c.policy));
  j["eviction_order"] = std::string(to_string(c.order));
  j["capacity"] = c.capacity;
  j["sink_count"] = c.sink_count;
  j["heads"] = c.heads;
  j["head_dim"] = c.head_dim;
  j["seed"] = c.seed;
  j["next_token_id"] = cache.next_token_id();
  j["token_ids"] = sel.token_ids;
  j["scores"] = cache.salience();
  std::vector<bool> pins;
  for (const CacheEntry& e : cache.entries()) pins.push_back(e.pinned);
  j["pins"] = pins;
  write_file(dir / "cache.json", j.dump(2) + "\n");
}

KvCache load_cache_snapshot(const fs::path& dir) {
  const nlohmann::json j = read_json(dir / "cache.json");
  try {
    CacheConfig c;
    c.policy = parse_policy(j.at("policy").get<std::string>());
    c.order = parse_eviction_order(j.at("eviction_order").get<std::string>());
    c.capacity = j.at("capacity").get<std::size_t>();
    c.sink_count = j.at("sink_count").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.head_dim = j.at("head_dim").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto ids = j.at("token_ids").get<std::vector<TokenId>>();
    const auto scores = j.at("scores").get<std::vector<double>>();
    const auto pins = j.at("pins").get<std::vector<bool>>();
    const Tensor keys = read_tensor(dir / "keys.pfkv");
    const Tensor values = read_tensor(dir / "values.pfkv");
    const std::size_t m = ids.size();
    if (scores.size() != m || pins.size() != m ||
        keys.shape() != std::vector<std::size_t>{m, c.heads, c.head_dim} ||
        values.shape() != keys.shape()) {
      throw FormatError(dir.string() + ": snapshot sidecar and tensors disagree");
    }
    const std::size_t width = c.heads * c.head_dim;
    std::vector<CacheEntry> entries(m);
    for (std::size_t i = 0; i < m; ++i) {
      entries[i].token_id = ids[i];
      entries[i].salience = scores[i];
      entries[i].pinned = pins[i];
      entries[i].k.assign(keys.values().begin() + i * width,
                          keys.values().begin() + (i + 1) * width);
      entries[i].v.assign(values.values().begin() + i * width,
                          values.values().begin() + (i + 1) * width);
    }
    return KvCache::restore(c, std::move(entries),
                            j.at("next_token_id").get<TokenId>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/cache.json: " + e.what());
  }
}

}  // namespace salkv
