#include "noisylab/models/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

namespace noisylab::models {

namespace {

constexpr char kMagic[8] = {'N', 'L', 'C', 'K', 'P', 'T', '0', '1'};

nlohmann::json metadata_json(const CheckpointMetadata& m) {
  nlohmann::json modules = nlohmann::json::array();
  for (const auto& info : m.modules) modules.push_back({{"path", info.path}, {"role", role_name(info.role)}});
  return {{"encoder",
           {{"in_channels", m.encoder.in_channels},
            {"stage_widths", m.encoder.stage_widths},
            {"blocks_per_stage", m.encoder.blocks_per_stage}}},
          {"framework", framework_name(m.framework)},
          {"num_classes", m.num_classes},
          {"provenance",
           {{"config_hash", m.provenance.config_hash}, {"seed", m.provenance.seed}, {"epoch", m.provenance.epoch}}},
          {"modules", modules}};
}

CheckpointMetadata metadata_from_json(const nlohmann::json& j) {
  CheckpointMetadata m;
  const auto& e = j.at("encoder");
  m.encoder.in_channels = e.at("in_channels").get<int>();
  m.encoder.stage_widths = e.at("stage_widths").get<std::vector<int>>();
  m.encoder.blocks_per_stage = e.at("blocks_per_stage").get<int>();
  m.framework = parse_framework(j.at("framework").get<std::string>());
  m.num_classes = j.at("num_classes").get<int>();
  const auto& p = j.at("provenance");
  m.provenance.config_hash = p.at("config_hash").get<std::string>();
  m.provenance.seed = p.at("seed").get<std::uint64_t>();
  m.provenance.epoch = p.at("epoch").get<int>();
  for (const auto& info : j.at("modules")) {
    m.modules.push_back({info.at("path").get<std::string>(), parse_role(info.at("role").get<std::string>())});
  }
  return m;
}

std::string header_text(const CheckpointBundle& b, std::uint64_t payload_start) {
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = payload_start;
  for (const auto& e : b.entries) {
    const std::uint64_t nbytes = e.data.size() * 4;
    entries.push_back(
        {{"path", e.path}, {"shape", e.shape}, {"role", role_name(e.role)}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  return nlohmann::json{{"entries", entries}, {"metadata", metadata_json(b.metadata)}}.dump();
}

}  // namespace

const CheckpointEntry* CheckpointBundle::find(std::string_view path) const {
  for (const auto& e : entries) {
    if (e.path == path) return &e;
  }
  return nullptr;
}

std::vector<const CheckpointEntry*> CheckpointBundle::entries_with_role(Role role) const {
  std::vector<const CheckpointEntry*> out;
  for (const auto& e : entries) {
    if (e.role == role) out.push_back(&e);
  }
  return out;
}

std::vector<std::uint8_t> CheckpointBundle::serialize() const {
  for (const auto& e : entries) {
    if (e.data.size() != shape_numel(e.shape)) {
      throw CheckpointFormatError(e.path + ": payload length does not match shape " + shape_string(e.shape));
    }
  }
  // Offsets are absolute, so the header length feeds back into itself;
  // iterate to a fixed point and pad with JSON whitespace.
  std::uint64_t header_len = header_text(*this, 0).size() + 32;
  std::string header;
  for (;;) {
    header = header_text(*this, sizeof kMagic + 8 + header_len);
    if (header.size() <= header_len) break;
    header_len = header.size() + 32;
  }
  header.append(header_len - header.size(), ' ');

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(header_len >> (8 * i)));
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& e : entries) {
    for (float v : e.data) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return out;
}

CheckpointBundle CheckpointBundle::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw CheckpointFormatError("not an NLCKPT01 checkpoint");
  }
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= std::uint64_t{bytes[8 + static_cast<std::size_t>(i)]} << (8 * i);
  if (header_len > bytes.size() - 16) throw CheckpointFormatError("checkpoint header truncated");
  CheckpointBundle b;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    b.metadata = metadata_from_json(header.at("metadata"));
    for (const auto& j : header.at("entries")) {
      CheckpointEntry e;
      e.path = j.at("path").get<std::string>();
      e.shape = j.at("shape").get<Shape>();
      e.role = parse_role(j.at("role").get<std::string>());
      const auto offset = j.at("offset").get<std::uint64_t>();
      const auto nbytes = j.at("nbytes").get<std::uint64_t>();
      if (nbytes != shape_numel(e.shape) * 4) {
        throw CheckpointFormatError(e.path + ": payload length does not match shape " + shape_string(e.shape));
      }
      if (offset < 16 + header_len || offset > bytes.size() || nbytes > bytes.size() - offset) {
        throw CheckpointFormatError(e.path + ": payload outside the file");
      }
      e.data.resize(static_cast<std::size_t>(nbytes / 4));
      for (std::size_t i = 0; i < e.data.size(); ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= std::uint32_t{bytes[offset + i * 4 + static_cast<std::size_t>(k)]} << (8 * k);
        e.data[i] = std::bit_cast<float>(bits);
      }
      b.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointFormatError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointFormatError(std::string("corrupt checkpoint header: ") + e.what());
  }
  return b;
}

void CheckpointBundle::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

CheckpointBundle CheckpointBundle::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

CheckpointBundle export_checkpoint(const SegmentationModel& model, const Provenance& provenance) {
  CheckpointBundle b;
  b.metadata.encoder = model.spec();
  b.metadata.framework = model.kind();
  b.metadata.num_classes = model.num_classes();
  b.metadata.provenance = provenance;
  b.metadata.modules = model.module_paths();
  for (const auto* p : model.parameters()) {
    b.entries.push_back({p->name, p->value.shape(), p->role, p->value.to_vector()});
  }
  return b;
}

ImportReport import_checkpoint(const CheckpointBundle& bundle, SegmentationModel& model, ImportScope scope,
                               bool strict) {
  const auto in_scope = [scope](Role r) { return scope == ImportScope::full || r == Role::encoder; };
  for (const auto& e : bundle.entries) {
    if (e.data.size() != shape_numel(e.shape)) {
      throw CheckpointFormatError(e.path + ": corrupt payload (length does not match shape)");
    }
  }

  ImportReport report;
  std::vector<std::pair<Parameter*, const CheckpointEntry*>> plan;
  for (auto* p : model.parameters()) {
    if (!in_scope(p->role)) continue;
    const auto* e = bundle.find(p->name);
    if (e == nullptr || !in_scope(e->role)) {
      if (strict) throw ShapeMismatchError(p->name, "missing from checkpoint");
      report.skipped.push_back(p->name);
      continue;
    }
    if (e->shape != p->value.shape()) {
      throw ShapeMismatchError(p->name, "shape " + shape_string(e->shape) + " in checkpoint, " +
                                            shape_string(p->value.shape()) + " in model");
    }
    plan.emplace_back(p, e);
  }
  for (const auto& e : bundle.entries) {
    if (!in_scope(e.role) || model.find_parameter(e.path) != nullptr) continue;
    if (strict) throw ShapeMismatchError(e.path, "not present in the receiving model");
    report.skipped.push_back(e.path);
  }
  if (bundle.metadata.encoder != model.spec()) {
    throw SpecMismatchError("checkpoint encoder spec differs from the model's");
  }
  if (scope == ImportScope::full &&
      (bundle.metadata.framework != model.kind() || bundle.metadata.num_classes != model.num_classes())) {
    throw SpecMismatchError("full import needs the same framework and class count");
  }
  for (auto& [param, entry] : plan) {
    std::copy(entry->data.begin(), entry->data.end(), param->value.data());
    report.copied.push_back(param->name);
  }
  return report;
}

std::vector<std::uint8_t> encoder_bytes(const CheckpointBundle& bundle) {
  std::vector<std::uint8_t> out;
  for (const auto* e : bundle.entries_with_role(Role::encoder)) {
    out.insert(out.end(), e->path.begin(), e->path.end());
    out.push_back(0);
    for (float v : e->data) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return out;
}

}  // namespace noisylab::models
