#include "sned/data/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "sned/numerics/resize.hpp"

namespace sned {

static_assert(std::endian::native == std::endian::little, "SNV1 I/O assumes a little-endian host");

const std::vector<std::string>& CaptionVocab::colors() {
  static const std::vector<std::string> v = {"red", "green", "blue"};
  return v;
}
const std::vector<std::string>& CaptionVocab::shapes() {
  static const std::vector<std::string> v = {"square", "circle", "triangle"};
  return v;
}
const std::vector<std::string>& CaptionVocab::motions() {
  static const std::vector<std::string> v = {"left", "right", "up", "down"};
  return v;
}

CaptionVocab::CaptionVocab() {
  std::vector<std::string> t;
  for (const auto* group : {&colors(), &shapes(), &motions()}) t.insert(t.end(), group->begin(), group->end());
  t.push_back("a");
  t.push_back("moving");
  *this = CaptionVocab(std::move(t));
}

CaptionVocab::CaptionVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) throw std::invalid_argument("duplicate vocabulary token " + tokens_[i]);
  }
}

int CaptionVocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw std::out_of_range("token '" + token + "' not in vocabulary");
  return it->second;
}

const Tensor<float>& VideoDataset::tier(int resolution) const {
  auto it = tiers.find(resolution);
  if (it == tiers.end()) throw std::out_of_range("dataset has no tier at resolution " + std::to_string(resolution));
  return it->second;
}

std::vector<std::string> VideoDataset::caption_words(int index) const {
  std::vector<std::string> w;
  for (int k = 0; k < kCaptionLength; ++k) w.push_back(vocab.token(captions.at(static_cast<std::size_t>(index * kCaptionLength + k))));
  return w;
}

namespace {

constexpr float kBackground = 0.2f;
constexpr float kColors[3][3] = {{0.9f, 0.15f, 0.15f}, {0.15f, 0.85f, 0.2f}, {0.15f, 0.25f, 0.9f}};

int wrap_delta(int a, int b, int period) {
  int d = ((a - b) % period + period) % period;
  if (d >= period / 2) d -= period;
  return d;
}

bool inside(int shape, int dx, int dy, int h) {
  switch (shape) {
    case 0:  // square
      return std::abs(dx) <= h && std::abs(dy) <= h;
    case 1:  // circle
      return dx * dx + dy * dy <= h * h;
    default:  // triangle, apex up
      return dy >= -h && dy <= h && 2 * std::abs(dx) <= dy + h;
  }
}

}  // namespace

VideoDataset gen_synthetic(int n, int frames, int max_resolution, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (frames < 2) throw std::invalid_argument("frames must be >= 2");
  if (max_resolution < 16) throw std::invalid_argument("max_resolution must be >= 16");
  VideoDataset d;
  d.n = n;
  d.frames = frames;
  d.max_resolution = max_resolution;
  const int R = max_resolution;
  const int h = std::max(3, R / 8);
  const int max_speed = std::max(1, R / 32);
  Tensor<float> master(Shape{n, frames, 3, R, R}, kBackground);
  Rng root(seed);
  for (int i = 0; i < n; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    const int color = static_cast<int>(rng.uniform_int(0, 2));
    const int shape = static_cast<int>(rng.uniform_int(0, 2));
    const int motion = static_cast<int>(rng.uniform_int(0, 3));
    const int speed = static_cast<int>(rng.uniform_int(1, max_speed));
    const int cx0 = static_cast<int>(rng.uniform_int(0, R - 1));
    const int cy0 = static_cast<int>(rng.uniform_int(0, R - 1));
    const int vx = motion == 0 ? -speed : motion == 1 ? speed : 0;
    const int vy = motion == 2 ? -speed : motion == 3 ? speed : 0;
    for (int f = 0; f < frames; ++f) {
      const int cx = cx0 + vx * f, cy = cy0 + vy * f;
      for (int y = 0; y < R; ++y) {
        for (int x = 0; x < R; ++x) {
          if (!inside(shape, wrap_delta(x, cx, R), wrap_delta(y, cy, R), h)) continue;
          for (int c = 0; c < 3; ++c) {
            master[((((static_cast<std::int64_t>(i) * frames + f) * 3 + c) * R + y) * R) + x] = kColors[color][c];
          }
        }
      }
    }
    for (const std::string& w : {std::string("a"), CaptionVocab::colors()[static_cast<std::size_t>(color)],
                                 CaptionVocab::shapes()[static_cast<std::size_t>(shape)], std::string("moving"),
                                 CaptionVocab::motions()[static_cast<std::size_t>(motion)]}) {
      d.captions.push_back(d.vocab.id(w));
    }
  }
  d.tiers.emplace(R, std::move(master));
  return d;
}

void build_tiers(VideoDataset& dataset, const std::vector<int>& resolutions) {
  const Tensor<float>& master = dataset.tier(dataset.max_resolution);
  for (int r : resolutions) {
    if (r < 1 || r > dataset.max_resolution) {
      throw std::invalid_argument("unsupported tier resolution " + std::to_string(r) + " (max " + std::to_string(dataset.max_resolution) + ")");
    }
    if (dataset.tiers.count(r)) continue;
    dataset.tiers.emplace(r, resize_bilinear_antialiased(master, r, r));
  }
}

namespace {

constexpr char kSnvMagic[4] = {'S', 'N', 'V', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

struct Reader {
  const std::string& bytes;
  const std::string& name;
  std::size_t pos = 0;

  void need(std::size_t k) const {
    if (pos + k > bytes.size()) throw SnvError(SnvError::Kind::TruncatedPayload, name + ": truncated payload");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
};

}  // namespace

std::filesystem::path tier_path(const std::filesystem::path& dir, int resolution) {
  return dir / ("tier_" + std::to_string(resolution) + ".snv");
}

void write_snv(const VideoDataset& dataset, int resolution, const std::filesystem::path& path) {
  const Tensor<float>& t = dataset.tier(resolution);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SnvError(SnvError::Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(kSnvMagic, 4);
  for (std::int64_t v : t.shape()) put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, kCaptionLength);
  put_u32(out, static_cast<std::uint32_t>(dataset.vocab.size()));
  for (const auto& tok : dataset.vocab.tokens()) {
    put_u32(out, static_cast<std::uint32_t>(tok.size()));
    out.write(tok.data(), static_cast<std::streamsize>(tok.size()));
  }
  for (int id : dataset.captions) put_u32(out, static_cast<std::uint32_t>(id));
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!out) throw SnvError(SnvError::Kind::Io, "write failed for " + path.string());
}

VideoDataset read_snv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SnvError(SnvError::Kind::Io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kSnvMagic, 4) != 0) throw SnvError(SnvError::Kind::BadMagic, name + ": bad magic");
  Reader r{bytes, name, 4};
  const std::uint32_t n = r.u32(), F = r.u32(), C = r.u32(), H = r.u32(), W = r.u32(), L = r.u32(), V = r.u32();
  if (L != kCaptionLength) throw SnvError(SnvError::Kind::Malformed, name + ": caption length " + std::to_string(L) + " unsupported");
  if (H != W || n == 0 || F == 0 || C == 0 || H == 0) throw SnvError(SnvError::Kind::Malformed, name + ": invalid dimensions");
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < V; ++i) {
    const std::uint32_t len = r.u32();
    r.need(len);
    tokens.emplace_back(bytes.data() + r.pos, len);
    r.pos += len;
  }
  VideoDataset d;
  d.vocab = CaptionVocab(std::move(tokens));
  d.n = static_cast<int>(n);
  d.frames = static_cast<int>(F);
  d.channels = static_cast<int>(C);
  d.max_resolution = static_cast<int>(H);
  for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(n) * L; ++i) {
    const std::uint32_t id = r.u32();
    if (id >= V) throw SnvError(SnvError::Kind::Malformed, name + ": caption id out of vocabulary");
    d.captions.push_back(static_cast<int>(id));
  }
  Tensor<float> t(Shape{n, F, C, H, W});
  const std::size_t payload = static_cast<std::size_t>(t.numel()) * sizeof(float);
  r.need(payload);
  if (r.pos + payload != bytes.size()) {
    throw SnvError(SnvError::Kind::SizeMismatch, name + ": header/payload size disagreement (" +
                                                     std::to_string(bytes.size() - r.pos) + " payload bytes, header implies " +
                                                     std::to_string(payload) + ")");
  }
  std::memcpy(t.data(), bytes.data() + r.pos, payload);
  d.tiers.emplace(static_cast<int>(H), std::move(t));
  return d;
}

void write_tiers(const VideoDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [r, t] : dataset.tiers) write_snv(dataset, r, tier_path(dir, r));
}

VideoDataset read_tiers(const std::filesystem::path& dir, const std::vector<int>& resolutions) {
  if (resolutions.empty()) throw std::invalid_argument("no tiers requested");
  VideoDataset out;
  bool first = true;
  for (int r : resolutions) {
    VideoDataset t = read_snv(tier_path(dir, r));
    if (t.max_resolution != r) throw SnvError(SnvError::Kind::Malformed, tier_path(dir, r).string() + ": stores resolution " + std::to_string(t.max_resolution));
    if (first) {
      out = std::move(t);
      out.max_resolution = r;
      first = false;
      continue;
    }
    if (t.n != out.n || t.frames != out.frames || t.captions != out.captions) {
      throw SnvError(SnvError::Kind::Malformed, "tier " + std::to_string(r) + " does not match the other tiers");
    }
    out.max_resolution = std::max(out.max_resolution, r);
    out.tiers.emplace(r, std::move(t.tiers.at(r)));
  }
  return out;
}

VideoBatch gather_batch(const VideoDataset& dataset, int resolution, const std::vector<int>& indices, bool ssr_pairs) {
  const Tensor<float>& tier = dataset.tier(resolution);
  const auto B = static_cast<std::int64_t>(indices.size());
  const std::int64_t per = tier.numel() / tier.dim(0);
  VideoBatch b;
  b.indices = indices;
  b.videos = Tensor<float>(Shape{B, tier.dim(1), tier.dim(2), tier.dim(3), tier.dim(4)});
  for (std::int64_t i = 0; i < B; ++i) {
    const int row = indices[static_cast<std::size_t>(i)];
    std::copy_n(tier.data() + row * per, per, b.videos.data() + i * per);
    for (int k = 0; k < kCaptionLength; ++k) b.captions.push_back(dataset.captions[static_cast<std::size_t>(row * kCaptionLength + k)]);
  }
  if (ssr_pairs) {
    if (resolution % 2 != 0) throw std::invalid_argument("SSR pairing needs an even resolution");
    const Tensor<float>& low = dataset.tier(resolution / 2);
    const std::int64_t lper = low.numel() / low.dim(0);
    Tensor<float> lo(Shape{B, low.dim(1), low.dim(2), low.dim(3), low.dim(4)});
    for (std::int64_t i = 0; i < B; ++i) std::copy_n(low.data() + indices[static_cast<std::size_t>(i)] * lper, lper, lo.data() + i * lper);
    b.low = std::move(lo);
  }
  return b;
}

BatchStream::BatchStream(const VideoDataset& dataset, int resolution, int batch_size, std::uint64_t seed, bool ssr_pairs)
    : data_(&dataset), resolution_(resolution), batch_size_(batch_size), rng_(seed), ssr_(ssr_pairs) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  dataset.tier(resolution);
  if (ssr_pairs) dataset.tier(resolution / 2);
  order_.resize(static_cast<std::size_t>(dataset.n));
  pos_ = order_.size();
}

void BatchStream::reshuffle() {
  std::iota(order_.begin(), order_.end(), 0);
  for (std::size_t i = order_.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order_[i - 1], order_[j]);
  }
  pos_ = 0;
  ++epoch_;
}

VideoBatch BatchStream::next() {
  if (pos_ >= order_.size()) reshuffle();
  const std::size_t end = std::min(order_.size(), pos_ + static_cast<std::size_t>(batch_size_));
  std::vector<int> idx(order_.begin() + static_cast<std::ptrdiff_t>(pos_), order_.begin() + static_cast<std::ptrdiff_t>(end));
  pos_ = end;
  return gather_batch(*data_, resolution_, idx, ssr_);
}

}  // namespace sned
