#include "tellme/weight_file.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "tellme/error.hpp"

namespace tellme {

namespace {

constexpr std::size_t kMaxRank = 4;
constexpr std::size_t kMaxTensors = 1u << 20;

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (len > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, data, chunk);
    data += chunk;
    len -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void patch_u64(std::size_t at, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : buf_(b) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > buf_.size() - pos_) fail(ErrorCode::kTruncated, "header ends before expected field");
  }
  std::uint64_t get_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{buf_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

void write_config(ByteWriter& w, const ModelConfig& c) {
  for (std::uint32_t v : {c.hidden, c.layers, c.heads, c.head_dim, c.ffn, c.vocab, c.capacity,
                          c.group_size, c.tables, c.q_block, c.parallelism})
    w.u32(v);
  w.f32(c.rope_theta);
  w.f32(c.norm_eps);
  w.u32(c.tied_embeddings ? 1u : 0u);
}

ModelConfig read_config(ByteReader& r) {
  ModelConfig c;
  for (std::uint32_t* f : {&c.hidden, &c.layers, &c.heads, &c.head_dim, &c.ffn, &c.vocab, &c.capacity,
                           &c.group_size, &c.tables, &c.q_block, &c.parallelism})
    *f = r.u32();
  c.rope_theta = r.f32();
  c.norm_eps = r.f32();
  const std::uint32_t flags = r.u32();
  require(flags <= 1u, ErrorCode::kRange, "unknown config flags");
  c.tied_embeddings = flags == 1u;
  return c;
}

struct DirEntry {
  std::string name;
  ElementType type = ElementType::kFp32;
  std::vector<std::uint64_t> shape;
  std::uint32_t group_size = 0;
  std::uint32_t tables = 0;
  float scale = 0.0f;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::uint32_t crc = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d)
      fail(ErrorCode::kShape, "shape element count overflows");
    n *= d;
  }
  return n;
}

// Payload byte length implied by the directory metadata alone.
std::uint64_t expected_length(const DirEntry& e) {
  switch (e.type) {
    case ElementType::kInt8: return element_count(e.shape);
    case ElementType::kFp32: {
      const std::uint64_t n = element_count(e.shape);
      require(n <= std::numeric_limits<std::uint64_t>::max() / 4, ErrorCode::kShape, "fp32 tensor too large");
      return n * 4;
    }
    case ElementType::kTernaryPacked: {
      require(e.shape.size() == 2, ErrorCode::kShape, "packed tensor '" + e.name + "' must be rank 2");
      require(e.group_size >= 1 && e.group_size <= kMaxGroupSize && e.tables >= 1, ErrorCode::kShape,
              "packed tensor '" + e.name + "' has invalid group/table parameters");
      const std::uint64_t per_block = std::uint64_t{e.tables} * e.group_size;
      const std::uint64_t super_rows = (e.shape[0] + per_block - 1) / per_block;
      return element_count({super_rows, e.shape[1], e.tables});
    }
  }
  fail(ErrorCode::kRange, "unknown element type");
}

DirEntry describe(const NamedTensor& t) {
  DirEntry e;
  e.name = t.name;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PackedTernaryMatrix>) {
          p.validate();
          e.type = ElementType::kTernaryPacked;
          e.shape = {p.rows, p.cols};
          e.group_size = p.group_size;
          e.tables = p.tables;
          e.scale = p.scale;
          e.length = p.indices.size();
        } else if constexpr (std::is_same_v<T, Int8Tensor>) {
          e.type = ElementType::kInt8;
          e.shape = p.shape;
          e.length = p.data.size();
        } else {
          e.type = ElementType::kFp32;
          e.shape = p.shape;
          e.length = p.data.size() * 4;
        }
      },
      t.payload);
  require(e.name.size() <= 0xFFFF, ErrorCode::kRange, "tensor name too long");
  require(e.shape.size() <= kMaxRank, ErrorCode::kShape, "tensor '" + e.name + "' rank exceeds 4");
  require(expected_length(e) == e.length, ErrorCode::kShape, "tensor '" + e.name + "' data does not match shape");
  return e;
}

void append_payload(ByteWriter& w, const NamedTensor& t) {
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PackedTernaryMatrix>) {
          w.bytes(p.indices.data(), p.indices.size());
        } else if constexpr (std::is_same_v<T, Int8Tensor>) {
          w.bytes(p.data.data(), p.data.size());
        } else {
          for (float f : p.data) w.f32(f);
        }
      },
      t.payload);
}

TensorPayload decode_payload(const DirEntry& e, const std::uint8_t* bytes) {
  switch (e.type) {
    case ElementType::kTernaryPacked: {
      PackedTernaryMatrix p;
      p.group_size = e.group_size;
      p.tables = e.tables;
      p.rows = static_cast<std::size_t>(e.shape[0]);
      p.cols = static_cast<std::size_t>(e.shape[1]);
      p.super_rows = (p.rows + p.block_rows() - 1) / p.block_rows();
      p.scale = e.scale;
      p.indices.assign(bytes, bytes + e.length);
      p.validate();
      return p;
    }
    case ElementType::kInt8: {
      Int8Tensor t{e.shape, {}};
      t.data.resize(e.length);
      std::memcpy(t.data.data(), bytes, e.length);
      return t;
    }
    case ElementType::kFp32: {
      Fp32Tensor t{e.shape, std::vector<float>(e.length / 4)};
      for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= std::uint32_t{bytes[4 * i + b]} << (8 * b);
        t.data[i] = std::bit_cast<float>(u);
      }
      return t;
    }
  }
  fail(ErrorCode::kRange, "unknown element type");
}

}  // namespace

const NamedTensor* WeightRecord::find(const std::string& name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

std::vector<std::uint8_t> serialize_weights(const WeightRecord& record) {
  std::vector<DirEntry> dir;
  dir.reserve(record.tensors.size());
  for (const auto& t : record.tensors) dir.push_back(describe(t));

  ByteWriter w;
  w.bytes(kWeightMagic, sizeof(kWeightMagic));
  w.u32(kWeightVersion);
  write_config(w, record.config);
  w.u32(static_cast<std::uint32_t>(dir.size()));
  std::vector<std::size_t> offset_slots;
  for (const auto& e : dir) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.type));
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (std::uint64_t d : e.shape) w.u64(d);
    w.u32(e.group_size);
    w.u32(e.tables);
    w.f32(e.scale);
    offset_slots.push_back(w.size());
    w.u64(0);  // offset, patched below
    w.u64(e.length);
    w.u32(0);  // payload crc, patched below
  }
  const std::size_t header_end = w.size() + 4;

  // Payload offsets and checksums are known only after layout; patch them
  // before computing the header checksum.
  std::uint64_t offset = header_end;
  for (std::size_t i = 0; i < dir.size(); ++i) {
    w.patch_u64(offset_slots[i], offset);
    offset += dir[i].length;
  }
  const std::size_t dir_crc_fixups = w.size();
  w.u32(0);  // header crc placeholder

  for (std::size_t i = 0; i < dir.size(); ++i) {
    const std::size_t start = w.size();
    append_payload(w, record.tensors[i]);
    const std::uint32_t crc = crc32_of(w.buffer().data() + start, w.size() - start);
    const std::size_t slot = offset_slots[i] + 16;
    for (int b = 0; b < 4; ++b) w.buffer()[slot + b] = static_cast<std::uint8_t>(crc >> (8 * b));
  }
  const std::uint32_t header_crc = crc32_of(w.buffer().data() + 8, dir_crc_fixups - 8);
  for (int b = 0; b < 4; ++b) w.buffer()[dir_crc_fixups + b] = static_cast<std::uint8_t>(header_crc >> (8 * b));
  return std::move(w.buffer());
}

WeightRecord deserialize_weights(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kWeightMagic) ||
      std::memcmp(bytes.data(), kWeightMagic, sizeof(kWeightMagic)) != 0)
    fail(ErrorCode::kBadMagic, "not a TELLME01 weight file");

  ByteReader r(bytes);
  r.str(sizeof(kWeightMagic));
  const std::uint32_t version = r.u32();
  require(version == kWeightVersion, ErrorCode::kBadVersion, "version " + std::to_string(version));

  WeightRecord record;
  record.config = read_config(r);
  const std::uint32_t count = r.u32();
  require(count <= kMaxTensors, ErrorCode::kRange, "implausible tensor count");

  std::vector<DirEntry> dir(count);
  for (auto& e : dir) {
    e.name = r.str(r.u16());
    const std::uint8_t type = r.u8();
    require(type <= 2, ErrorCode::kRange, "unknown element type tag " + std::to_string(type));
    e.type = static_cast<ElementType>(type);
    const std::uint8_t rank = r.u8();
    require(rank <= kMaxRank, ErrorCode::kShape, "rank exceeds 4");
    e.shape.resize(rank);
    for (auto& d : e.shape) d = r.u64();
    e.group_size = r.u32();
    e.tables = r.u32();
    e.scale = r.f32();
    e.offset = r.u64();
    e.length = r.u64();
    e.crc = r.u32();
  }
  const std::size_t crc_pos = r.pos();
  const std::uint32_t header_crc = r.u32();
  require(header_crc == crc32_of(bytes.data() + 8, crc_pos - 8), ErrorCode::kChecksum, "header checksum");

  std::uint64_t cursor = r.pos();
  for (const auto& e : dir) {
    require(e.offset == cursor, ErrorCode::kLengthMismatch, "tensor '" + e.name + "' payload offset");
    require(e.length == expected_length(e), ErrorCode::kLengthMismatch,
            "tensor '" + e.name + "' declared length disagrees with its shape");
    if (e.length > bytes.size() - cursor) fail(ErrorCode::kTruncated, "payload of '" + e.name + "'");
    cursor += e.length;
  }
  require(cursor == bytes.size(), ErrorCode::kLengthMismatch, "trailing bytes after last payload");

  record.tensors.reserve(count);
  for (const auto& e : dir) {
    const std::uint8_t* payload = bytes.data() + e.offset;
    require(crc32_of(payload, e.length) == e.crc, ErrorCode::kChecksum, "payload of '" + e.name + "'");
    record.tensors.push_back({e.name, decode_payload(e, payload)});
  }
  return record;
}

void write_weights(const std::filesystem::path& path, const WeightRecord& record) {
  const auto bytes = serialize_weights(record);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

WeightRecord read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

}  // namespace tellme
