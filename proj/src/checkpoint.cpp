// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "mobiletl/model.hpp"

namespace mobiletl {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'L', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kSpecName = "__spec__";
constexpr const char* kScaleSuffix = ".__scale__";

struct Entry {
  std::string name;
  Tensor tensor;
};

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::byte{static_cast<unsigned char>(v >> (8 * i))});
}

void put_u8(std::vector<std::byte>& out, std::uint8_t v) { out.push_back(std::byte{v}); }

class Reader {
 public:
  explicit Reader(std::vector<std::byte> data) : data_(std::move(data)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::to_integer<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return std::to_integer<std::uint8_t>(data_[pos_++]);
  }
  void bytes(std::span<std::byte> dst) {
    need(dst.size());
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(pos_), dst.size(), dst.begin());
    pos_ += dst.size();
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("checkpoint truncated");
  }
  std::vector<std::byte> data_;
  std::size_t pos_ = 0;
};

std::vector<Entry> collect(Model& model) {
  std::vector<Entry> entries;
  const std::string spec = model_spec_to_json(model.spec());
  Tensor spec_t({static_cast<std::int64_t>(spec.size())}, DType::I8);
  std::memcpy(spec_t.bytes().data(), spec.data(), spec.size());
  entries.push_back({kSpecName, std::move(spec_t)});
  auto add = [&](Parameter* p) {
    entries.push_back({p->name, p->value});
    if (p->value.dtype() == DType::I8) {
      entries.push_back({p->name + kScaleSuffix, Tensor::full({1}, DType::F32, p->value.scale())});
    }
  };
  for (auto* p : model.parameters()) add(p);
  for (auto* p : model.buffers()) add(p);
  return entries;
}

std::vector<std::byte> encode(const std::vector<Entry>& entries) {
  std::vector<std::byte> out;
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    for (char c : e.name) out.push_back(static_cast<std::byte>(c));
    put_u8(out, static_cast<std::uint8_t>(e.tensor.dtype()));
    put_u8(out, static_cast<std::uint8_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    const auto raw = e.tensor.bytes();
    out.insert(out.end(), raw.begin(), raw.end());
  }
  return out;
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path) {
  const auto bytes = encode(collect(model));
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

std::int64_t checkpoint_header_bytes(Model& model) {
  std::int64_t payload = 0;
  for (auto* p : model.parameters()) payload += static_cast<std::int64_t>(p->value.nbytes());
  for (auto* p : model.buffers()) payload += static_cast<std::int64_t>(p->value.nbytes());
  return static_cast<std::int64_t>(encode(collect(model)).size()) - payload;
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> data(raw.size());
  std::memcpy(data.data(), raw.data(), raw.size());
  Reader r(std::move(data));

  std::byte magic[4];
  r.bytes(magic);
  for (int i = 0; i < 4; ++i) {
    if (magic[i] != static_cast<std::byte>(kMagic[i])) throw FormatError("bad checkpoint magic");
  }
  if (const auto v = r.u32(); v != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  }
  const auto count = r.u32();
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u32();
    if (len > (1u << 20)) throw FormatError("implausible tensor name length");
    std::string name(len, '\0');
    r.bytes(std::as_writable_bytes(std::span<char>(name.data(), name.size())));
    const auto code = r.u8();
    if (code > static_cast<std::uint8_t>(DType::Bit2)) throw FormatError("unknown dtype code");
    const auto rank = r.u8();
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.u32());
    Tensor t;
    try {
      t = Tensor(shape, static_cast<DType>(code));
    } catch (const ShapeError& e) {
      throw FormatError(std::string("bad tensor shape in checkpoint: ") + e.what());
    }
    r.bytes(t.bytes());
    entries.push_back({std::move(name), std::move(t)});
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint tensors");
  if (entries.empty() || entries.front().name != kSpecName) {
    throw FormatError("checkpoint does not start with the model spec");
  }
  const auto& st = entries.front().tensor;
  std::string spec_json(static_cast<std::size_t>(st.numel()), '\0');
  std::memcpy(spec_json.data(), st.bytes().data(), spec_json.size());
  ModelSpec spec;
  try {
    spec = parse_model_spec(spec_json);
  } catch (const Error& e) {
    throw FormatError(std::string("embedded spec invalid: ") + e.what());
  }

  Model model(spec, DType::F32);
  std::size_t assigned = 0;
  for (std::size_t i = 1; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (e.name.ends_with(kScaleSuffix)) continue;
    Parameter* p = model.find(e.name);
    if (p == nullptr) throw FormatError("unknown tensor '" + e.name + "' in checkpoint");
    if (p->value.shape() != e.tensor.shape()) {
      throw FormatError("shape mismatch for '" + e.name + "'");
    }
    if (e.tensor.dtype() == DType::I8) {
      const std::string scale_name = e.name + kScaleSuffix;
      bool found = false;
      for (auto& s : entries) {
        if (s.name == scale_name) {
          e.tensor.set_scale(static_cast<float>(s.tensor.get(0)));
          found = true;
        }
      }
      if (!found) throw FormatError("missing scale for quantized tensor '" + e.name + "'");
    }
    p->value = std::move(e.tensor);
    ++assigned;
  }
  if (assigned != model.parameters().size() + model.buffers().size()) {
    throw FormatError("checkpoint is missing tensors");
  }
  return model;
}

}  // namespace mobiletl
