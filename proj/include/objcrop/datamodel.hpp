#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "objcrop/error.hpp"

namespace objcrop {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/**
 * Axis-aligned pixel rectangle, half-open: [x_min, x_max) x [y_min, y_max).
 * Width is x_max - x_min with no off-by-one.
 */
struct BoundingBox {
  std::uint32_t x_min = 0;
  std::uint32_t y_min = 0;
  std::uint32_t x_max = 0;
  std::uint32_t y_max = 0;

  std::uint32_t width() const noexcept { return x_max - x_min; }
  std::uint32_t height() const noexcept { return y_max - y_min; }
  std::uint64_t area() const noexcept { return std::uint64_t{width()} * height(); }

  bool valid() const noexcept { return x_min < x_max && y_min < y_max; }
  bool fits(std::uint32_t w, std::uint32_t h) const noexcept {
    return valid() && x_max <= w && y_max <= h;
  }
  bool contains(const BoundingBox& o) const noexcept {
    return x_min <= o.x_min && y_min <= o.y_min && o.x_max <= x_max && o.y_max <= y_max;
  }
  bool contains_point(std::uint32_t x, std::uint32_t y) const noexcept {
    return x_min <= x && x < x_max && y_min <= y && y < y_max;
  }

  static BoundingBox full(std::uint32_t w, std::uint32_t h) noexcept { return {0, 0, w, h}; }

  auto operator<=>(const BoundingBox&) const = default;
};

inline std::string to_string(const BoundingBox& b) {
  std::ostringstream os;
  os << '(' << b.x_min << ',' << b.y_min << ',' << b.x_max << ',' << b.y_max << ')';
  return os.str();
}

inline void require_valid(const BoundingBox& b, std::string_view what = "box") {
  if (!b.valid())
    throw ValidationError(std::string(what) + " " + to_string(b) +
                          " violates x_min < x_max, y_min < y_max");
}

struct PixelPoint {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  auto operator<=>(const PixelPoint&) const = default;
};

enum class BoxSource { gt, sam, salient };

inline std::string_view to_string(BoxSource s) {
  switch (s) {
    case BoxSource::gt: return "gt";
    case BoxSource::sam: return "sam";
    case BoxSource::salient: return "salient";
  }
  return "?";
}

inline BoxSource parse_box_source(std::string_view s) {
  if (s == "gt") return BoxSource::gt;
  if (s == "sam") return BoxSource::sam;
  if (s == "salient") return BoxSource::salient;
  throw ValidationError("unknown box source '" + std::string(s) + "'");
}

struct ImageRecord {
  std::string image_id;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::string class_label;
  std::optional<BoundingBox> gt_box;
  std::optional<PixelPoint> point;
  std::optional<BoundingBox> sam_box;
  std::optional<BoundingBox> salient_box;

  BoundingBox full_box() const noexcept { return BoundingBox::full(width, height); }

  std::optional<BoundingBox> box(BoxSource s) const {
    switch (s) {
      case BoxSource::gt: return gt_box;
      case BoxSource::sam: return sam_box;
      case BoxSource::salient: return salient_box;
    }
    return std::nullopt;
  }

  /// Annotator click: the stored point, else the centre of the ground-truth box.
  std::optional<PixelPoint> click() const {
    if (point) return point;
    if (gt_box)
      return PixelPoint{(gt_box->x_min + gt_box->x_max) / 2, (gt_box->y_min + gt_box->y_max) / 2};
    return std::nullopt;
  }
};

struct DatasetManifest {
  std::string name;
  std::vector<std::string> classes;
  std::vector<ImageRecord> images;

  const ImageRecord* find(std::string_view id) const {
    for (const auto& r : images)
      if (r.image_id == id) return &r;
    return nullptr;
  }
};

/// Throws ValidationError naming the first offending image_id.
inline void validate(const DatasetManifest& m) {
  std::map<std::string, int> seen;
  for (const auto& r : m.images) {
    auto fail = [&](const std::string& why) {
      throw ValidationError("image '" + r.image_id + "': " + why);
    };
    if (r.image_id.empty()) throw ValidationError("image with empty id");
    if (r.image_id.size() > 0xFFFF) fail("id longer than 65535 bytes");
    if (!seen.emplace(r.image_id, 0).second) fail("duplicate image id");
    if (r.width == 0 || r.height == 0) fail("zero image dimension");
    if (std::find(m.classes.begin(), m.classes.end(), r.class_label) == m.classes.end())
      fail("label '" + r.class_label + "' not in class list");
    for (auto s : {BoxSource::gt, BoxSource::sam, BoxSource::salient}) {
      if (auto b = r.box(s); b && !b->fits(r.width, r.height))
        fail(std::string(to_string(s)) + " box " + to_string(*b) + " invalid for " +
             std::to_string(r.width) + "x" + std::to_string(r.height) + " image");
    }
    if (r.point) {
      if (r.point->x >= r.width || r.point->y >= r.height) fail("point outside image");
      if (r.gt_box && !r.gt_box->contains_point(r.point->x, r.point->y))
        fail("point outside gt_box");
    }
  }
}

// ---------------------------------------------------------------------------
// Manifest JSON

namespace detail {

inline BoundingBox box_from_json(const nlohmann::json& j, const std::string& id) {
  if (!j.is_array() || j.size() != 4)
    throw ValidationError("image '" + id + "': box must be [x_min,y_min,x_max,y_max]");
  std::array<std::uint32_t, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number_integer() || j[i].get<std::int64_t>() < 0 ||
        j[i].get<std::int64_t>() > 0xFFFFFFFFll)
      throw ValidationError("image '" + id + "': box coordinates must be non-negative integers");
    v[i] = j[i].get<std::uint32_t>();
  }
  return {v[0], v[1], v[2], v[3]};
}

inline nlohmann::json box_to_json(const BoundingBox& b) {
  return nlohmann::json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

}  // namespace detail

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  if (!j.is_object() || !j.contains("images") || !j["images"].is_array())
    throw ValidationError("manifest must be an object with an 'images' array");
  m.name = j.value("name", std::string{});
  for (const auto& e : j["images"]) {
    ImageRecord r;
    try {
      r.image_id = e.at("id").get<std::string>();
      r.width = e.at("width").get<std::uint32_t>();
      r.height = e.at("height").get<std::uint32_t>();
      r.class_label = e.at("label").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError(std::string("malformed image entry: ") + ex.what());
    }
    if (e.contains("gt_box") && !e["gt_box"].is_null())
      r.gt_box = detail::box_from_json(e["gt_box"], r.image_id);
    if (e.contains("point") && !e["point"].is_null()) {
      const auto& p = e["point"];
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned())
        throw ValidationError("image '" + r.image_id + "': point must be [x,y]");
      r.point = PixelPoint{p[0].get<std::uint32_t>(), p[1].get<std::uint32_t>()};
    }
    if (e.contains("derived_boxes") && e["derived_boxes"].is_object()) {
      const auto& d = e["derived_boxes"];
      if (d.contains("sam") && !d["sam"].is_null()) r.sam_box = detail::box_from_json(d["sam"], r.image_id);
      if (d.contains("salient") && !d["salient"].is_null())
        r.salient_box = detail::box_from_json(d["salient"], r.image_id);
    }
    m.images.push_back(std::move(r));
  }
  if (j.contains("classes")) {
    m.classes = j["classes"].get<std::vector<std::string>>();
  } else {
    for (const auto& r : m.images)
      if (std::find(m.classes.begin(), m.classes.end(), r.class_label) == m.classes.end())
        m.classes.push_back(r.class_label);
  }
  validate(m);
  return m;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& r : m.images) {
    nlohmann::json e{{"id", r.image_id}, {"width", r.width}, {"height", r.height}, {"label", r.class_label}};
    if (r.gt_box) e["gt_box"] = detail::box_to_json(*r.gt_box);
    if (r.point) e["point"] = {r.point->x, r.point->y};
    if (r.sam_box || r.salient_box) {
      nlohmann::json d = nlohmann::json::object();
      if (r.sam_box) d["sam"] = detail::box_to_json(*r.sam_box);
      if (r.salient_box) d["salient"] = detail::box_to_json(*r.salient_box);
      e["derived_boxes"] = d;
    }
    images.push_back(std::move(e));
  }
  return {{"name", m.name}, {"classes", m.classes}, {"images", images}};
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDataError("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError("manifest '" + path + "' is not valid JSON: " + ex.what());
  }
  return manifest_from_json(j);
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest '" + path + "'");
  out << manifest_to_json(m).dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Feature keys

struct FullImage {
  auto operator<=>(const FullImage&) const = default;
};

using Crop = std::variant<FullImage, BoundingBox>;

struct FeatureKey {
  std::string image_id;
  Crop crop;

  bool is_full() const noexcept { return std::holds_alternative<FullImage>(crop); }

  auto operator<=>(const FeatureKey&) const = default;
};

inline FeatureKey canonical_key(std::string image_id, Crop crop) {
  if (const auto* b = std::get_if<BoundingBox>(&crop)) require_valid(*b, "crop");
  return FeatureKey{std::move(image_id), crop};
}

/// Crop of `box` on `rec`; a box covering the whole image collapses to FULL.
inline FeatureKey crop_key(const ImageRecord& rec, const BoundingBox& box) {
  if (box == rec.full_box()) return canonical_key(rec.image_id, FullImage{});
  return canonical_key(rec.image_id, box);
}

inline FeatureKey full_key(const std::string& image_id) { return FeatureKey{image_id, FullImage{}}; }

/// Text form: `<id>@full` or `<id>@x0,y0,x1,y1`. The last '@' separates the crop.
inline std::string to_string(const FeatureKey& k) {
  std::string s = k.image_id + "@";
  if (k.is_full()) return s + "full";
  const auto& b = std::get<BoundingBox>(k.crop);
  return s + std::to_string(b.x_min) + "," + std::to_string(b.y_min) + "," + std::to_string(b.x_max) +
         "," + std::to_string(b.y_max);
}

inline FeatureKey parse_feature_key(std::string_view s) {
  auto at = s.rfind('@');
  if (at == std::string_view::npos || at == 0) throw ValidationError("malformed feature key '" + std::string(s) + "'");
  std::string id(s.substr(0, at));
  auto crop = s.substr(at + 1);
  if (crop == "full") return canonical_key(std::move(id), FullImage{});
  std::array<std::uint32_t, 4> v{};
  std::size_t pos = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    auto next = i < 3 ? crop.find(',', pos) : crop.size();
    if (next == std::string_view::npos || next == pos)
      throw ValidationError("malformed feature key '" + std::string(s) + "'");
    std::uint64_t acc = 0;
    for (auto c : crop.substr(pos, next - pos)) {
      if (c < '0' || c > '9') throw ValidationError("malformed feature key '" + std::string(s) + "'");
      acc = acc * 10 + static_cast<std::uint64_t>(c - '0');
      if (acc > 0xFFFFFFFFull) throw ValidationError("coordinate overflow in '" + std::string(s) + "'");
    }
    v[i] = static_cast<std::uint32_t>(acc);
    pos = next + 1;
  }
  return canonical_key(std::move(id), BoundingBox{v[0], v[1], v[2], v[3]});
}

// ---------------------------------------------------------------------------
// Feature store

/**
 * Map from FeatureKey to an embedding of uniform dimension. Values are kept
 * as 32-bit floats so a write/read cycle is bit-exact; lookups widen to double.
 * Immutable once loaded, so concurrent readers need no locking.
 */
class FeatureStore {
public:
  explicit FeatureStore(std::uint32_t dimension = 0) : dim_(dimension) {}

  std::uint32_t dimension() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(const FeatureKey& k) const { return entries_.count(k) != 0; }
  const std::map<FeatureKey, std::vector<float>>& entries() const noexcept { return entries_; }

  void insert(FeatureKey key, std::vector<float> v) {
    if (dim_ == 0) {
      if (v.empty()) throw ValidationError("feature vectors must be non-empty");
      dim_ = static_cast<std::uint32_t>(v.size());
    }
    if (v.size() != dim_)
      throw ValidationError("feature for " + to_string(key) + " has dimension " + std::to_string(v.size()) +
                            ", store expects " + std::to_string(dim_));
    for (float x : v)
      if (!std::isfinite(x)) throw ValidationError("non-finite feature for " + to_string(key));
    entries_.insert_or_assign(std::move(key), std::move(v));
  }

  void insert(FeatureKey key, const Vector& v) {
    std::vector<float> f(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    insert(std::move(key), std::move(f));
  }

  Vector lookup(const FeatureKey& k) const {
    auto it = entries_.find(k);
    if (it == entries_.end()) throw MissingDataError("feature not found: " + to_string(k), {to_string(k)});
    Vector out(dim_);
    for (std::uint32_t i = 0; i < dim_; ++i) out[i] = static_cast<double>(it->second[i]);
    return out;
  }

  bool operator==(const FeatureStore& o) const {
    if (dim_ != o.dim_ || entries_.size() != o.entries_.size()) return false;
    for (auto a = entries_.begin(), b = o.entries_.begin(); a != entries_.end(); ++a, ++b) {
      if (a->first != b->first) return false;
      if (std::memcmp(a->second.data(), b->second.data(), a->second.size() * sizeof(float)) != 0) return false;
    }
    return true;
  }

private:
  std::uint32_t dim_;
  std::map<FeatureKey, std::vector<float>> entries_;
};

/// Throws MissingDataError listing every absent key.
inline void require_keys(const FeatureStore& store, const std::vector<FeatureKey>& keys) {
  std::vector<std::string> missing;
  for (const auto& k : keys)
    if (!store.contains(k)) missing.push_back(to_string(k));
  std::sort(missing.begin(), missing.end());
  missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " feature(s) missing from cache:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += "\n  " + missing[i];
    if (missing.size() > 20) msg += "\n  ...";
    throw MissingDataError(msg, std::move(missing));
  }
}

// ---------------------------------------------------------------------------
// FSCACHE1 codec. Little-endian throughout:
//   "FSCACHE1" | u32 d | u32 n | n * { u16 len | id | u8 tag | [4 * u32] | d * f32 }

inline constexpr std::string_view kCacheMagic = "FSCACHE1";

namespace detail {

template <typename T>
void put_le(std::string& buf, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

class Reader {
public:
  explicit Reader(std::span<const char> data) : data_(data) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view v(data_.data() + pos_, n);
    pos_ += n;
    return v;
  }

  bool done() const noexcept { return pos_ == data_.size(); }

private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n)
      throw CodecError(CodecError::Kind::truncated, "truncated feature cache at byte " + std::to_string(pos_));
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_store(const FeatureStore& store) {
  if (store.size() > 0xFFFFFFFFull) throw ValidationError("too many cache records");
  std::string buf(kCacheMagic);
  detail::put_le<std::uint32_t>(buf, store.dimension());
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(store.size()));
  for (const auto& [key, vec] : store.entries()) {
    if (key.image_id.size() > 0xFFFF) throw ValidationError("image id too long: " + key.image_id.substr(0, 32));
    detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(key.image_id.size()));
    buf += key.image_id;
    if (key.is_full()) {
      buf.push_back('\0');
    } else {
      const auto& b = std::get<BoundingBox>(key.crop);
      buf.push_back('\1');
      for (auto c : {b.x_min, b.y_min, b.x_max, b.y_max}) detail::put_le<std::uint32_t>(buf, c);
    }
    for (float x : vec) detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(x));
  }
  return buf;
}

/// `expected_dimension` of 0 accepts any dimension.
inline FeatureStore decode_store(std::span<const char> data, std::uint32_t expected_dimension = 0) {
  detail::Reader rd(data);
  if (data.size() < kCacheMagic.size() || std::string_view(data.data(), kCacheMagic.size()) != kCacheMagic)
    throw CodecError(CodecError::Kind::bad_magic, "bad magic: not an FSCACHE1 feature cache");
  rd.bytes(kCacheMagic.size());
  const auto d = rd.le<std::uint32_t>();
  const auto n = rd.le<std::uint32_t>();
  if (d == 0) throw CodecError(CodecError::Kind::dimension_mismatch, "feature cache declares dimension 0");
  if (expected_dimension != 0 && d != expected_dimension)
    throw CodecError(CodecError::Kind::dimension_mismatch, "dimension mismatch: cache has " + std::to_string(d) +
                                                               ", expected " + std::to_string(expected_dimension));
  FeatureStore store(d);
  for (std::uint32_t r = 0; r < n; ++r) {
    const auto len = rd.le<std::uint16_t>();
    std::string id(rd.bytes(len));
    const auto tag = rd.le<std::uint8_t>();
    Crop crop = FullImage{};
    if (tag == 1) {
      BoundingBox b;
      b.x_min = rd.le<std::uint32_t>();
      b.y_min = rd.le<std::uint32_t>();
      b.x_max = rd.le<std::uint32_t>();
      b.y_max = rd.le<std::uint32_t>();
      crop = b;
    } else if (tag != 0) {
      throw CodecError(CodecError::Kind::invalid_record, "record " + std::to_string(r) + ": bad crop tag");
    }
    std::vector<float> v(d);
    for (auto& x : v) x = std::bit_cast<float>(rd.le<std::uint32_t>());
    FeatureKey key;
    try {
      key = canonical_key(std::move(id), crop);
      if (store.contains(key)) throw ValidationError("duplicate key " + to_string(key));
      store.insert(key, std::move(v));
    } catch (const ValidationError& e) {
      throw CodecError(CodecError::Kind::invalid_record, "record " + std::to_string(r) + ": " + e.what());
    }
  }
  if (!rd.done()) throw CodecError(CodecError::Kind::invalid_record, "trailing bytes after last record");
  return store;
}

inline void store_write(const FeatureStore& store, const std::string& path) {
  const auto buf = encode_store(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CodecError(CodecError::Kind::io, "cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CodecError(CodecError::Kind::io, "write to '" + path + "' failed");
}

inline FeatureStore store_read(const std::string& path, std::uint32_t expected_dimension = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CodecError(CodecError::Kind::io, "cannot open feature cache '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_store(std::span<const char>(buf.data(), buf.size()), expected_dimension);
}

// ---------------------------------------------------------------------------
// Crop manifest: one JSON object per line, {image_id, crop, purpose}.

struct CropRequest {
  FeatureKey key;
  std::string purpose;

  auto operator<=>(const CropRequest&) const = default;
};

inline std::string crop_request_line(const CropRequest& r) {
  nlohmann::json j;
  j["image_id"] = r.key.image_id;
  if (r.key.is_full())
    j["crop"] = "full";
  else
    j["crop"] = detail::box_to_json(std::get<BoundingBox>(r.key.crop));
  j["purpose"] = r.purpose;
  return j.dump();
}

inline CropRequest parse_crop_request(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed crop request: ") + ex.what());
  }
  if (!j.is_object() || !j.contains("image_id") || !j.contains("crop"))
    throw ValidationError("crop request needs image_id and crop");
  auto id = j["image_id"].get<std::string>();
  const auto& c = j["crop"];
  Crop crop = FullImage{};
  if (c.is_string()) {
    if (c.get<std::string>() != "full") throw ValidationError("crop must be \"full\" or a box");
  } else {
    crop = detail::box_from_json(c, id);
  }
  return {canonical_key(std::move(id), crop), j.value("purpose", std::string{})};
}

}  // namespace objcrop
