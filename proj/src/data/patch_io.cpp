#include "noisylab/data/patch_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "noisylab/common.hpp"

namespace noisylab::data {

namespace {

constexpr char kMagic[4] = {'N', 'L', 'P', 'T'};
// Upper bound on C*H*W; a header beyond this is treated as corrupt rather
// than as a request for gigabytes of payload.
constexpr std::uint64_t kMaxImageValues = std::uint64_t{1} << 28;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(bytes[pos + i]) << (8 * i));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::vector<std::uint8_t> encode_patch(const PatchTriple& triple) {
  triple.validate();
  const int c = triple.channels();
  const int h = triple.height();
  const int w = triple.width();
  if (c > std::numeric_limits<std::uint16_t>::max() || h > std::numeric_limits<std::uint16_t>::max() ||
      w > std::numeric_limits<std::uint16_t>::max()) {
    throw DimensionError("patch dimensions exceed the u16 header fields");
  }
  if (triple.num_exact_classes > 255 || triple.num_noisy_classes > 255) {
    throw DimensionError("class counts exceed the u8 header fields");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kPatchHeaderBytes + triple.image.size() * 4 + 2 * triple.exact_mask.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint8_t>(out, kPatchFormatVersion);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(c));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(h));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(w));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(triple.num_exact_classes));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(triple.num_noisy_classes));
  put<std::uint16_t>(out, triple.variant_id);
  put<std::uint64_t>(out, triple.seed);
  for (float v : triple.image.values()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  out.insert(out.end(), triple.exact_mask.values.begin(), triple.exact_mask.values.end());
  out.insert(out.end(), triple.noisy_mask.values.begin(), triple.noisy_mask.values.end());
  return out;
}

PatchTriple decode_patch(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagicError("not an NLPT patch file");
  if (bytes.size() < kPatchHeaderBytes) throw TruncatedError("patch header truncated");
  std::size_t pos = 4;
  const auto version = get<std::uint8_t>(bytes, pos);
  if (version != kPatchFormatVersion) {
    throw VersionError("unsupported patch format version " + std::to_string(version));
  }
  const auto c = get<std::uint16_t>(bytes, pos);
  const auto h = get<std::uint16_t>(bytes, pos);
  const auto w = get<std::uint16_t>(bytes, pos);
  PatchTriple t;
  t.num_exact_classes = get<std::uint8_t>(bytes, pos);
  t.num_noisy_classes = get<std::uint8_t>(bytes, pos);
  t.variant_id = get<std::uint16_t>(bytes, pos);
  t.seed = get<std::uint64_t>(bytes, pos);

  const std::uint64_t pixels = std::uint64_t{h} * w;
  const std::uint64_t values = pixels * c;
  if (c == 0 || pixels == 0 || values > kMaxImageValues) {
    throw DimensionError("patch header declares invalid dimensions " + std::to_string(c) + "x" +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  const std::uint64_t needed = kPatchHeaderBytes + values * 4 + 2 * pixels;
  if (bytes.size() < needed) {
    throw TruncatedError("patch payload truncated: need " + std::to_string(needed) + " bytes, have " +
                         std::to_string(bytes.size()));
  }
  if (bytes.size() > needed) throw FormatError("trailing bytes after patch payload");

  std::vector<float> image(static_cast<std::size_t>(values));
  for (auto& v : image) v = std::bit_cast<float>(get<std::uint32_t>(bytes, pos));
  t.image = Tensor({c, h, w}, std::move(image));
  t.exact_mask = LabelMask(h, w);
  t.noisy_mask = LabelMask(h, w);
  std::memcpy(t.exact_mask.values.data(), bytes.data() + pos, static_cast<std::size_t>(pixels));
  pos += static_cast<std::size_t>(pixels);
  std::memcpy(t.noisy_mask.values.data(), bytes.data() + pos, static_cast<std::size_t>(pixels));
  try {
    t.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid patch payload: ") + e.what());
  }
  return t;
}

void write_patch(const PatchTriple& triple, const std::filesystem::path& path) {
  const auto bytes = encode_patch(triple);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

PatchTriple read_patch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_patch(bytes);
}

}  // namespace noisylab::data
