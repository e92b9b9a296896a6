#include "foreranker/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "foreranker/errors.hpp"
#include "foreranker/rng.hpp"

namespace foreranker {

namespace {

constexpr char kMagic[8] = {'F', 'R', 'N', 'K', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t pos() const { return pos_; }
  const std::string& data() const { return data_; }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckpointHeader parse_header(Reader& r) {
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw ParseError("not a checkpoint file (bad magic)");
  CheckpointHeader h;
  h.version = r.u32();
  if (h.version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(h.version) + " (expected " +
                     std::to_string(kCheckpointVersion) + ")");
  }
  h.arch.vocab_size = r.u64();
  h.arch.d_model = r.u64();
  h.arch.heads = r.u64();
  h.arch.ff_width = r.u64();
  h.arch.layers = r.u64();
  h.arch.max_length = r.u64();
  h.arch.head_hidden = r.u64();
  h.vocab_hash = r.u64();
  return h;
}

std::string describe(const ArchConfig& a) {
  return "vocab=" + std::to_string(a.vocab_size) + " d_model=" + std::to_string(a.d_model) +
         " heads=" + std::to_string(a.heads) + " ff=" + std::to_string(a.ff_width) +
         " layers=" + std::to_string(a.layers) + " max_length=" + std::to_string(a.max_length) +
         " head_hidden=" + std::to_string(a.head_hidden);
}

}  // namespace

template <typename T>
void save_checkpoint(const ModelParams<T>& params, std::uint64_t vocab_hash,
                     const std::filesystem::path& path) {
  Writer w;
  const auto& a = params.config();
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  for (std::uint64_t v : {a.vocab_size, a.d_model, a.heads, a.ff_width, a.layers, a.max_length, a.head_hidden}) {
    w.u64(v);
  }
  w.u64(vocab_hash);
  const auto& tensors = params.layout().tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u64(t.rows);
    w.u64(t.cols);
    for (std::size_t i = 0; i < t.size(); ++i) w.f64(static_cast<double>(params.values()[t.offset + i]));
  }
  const std::uint64_t checksum = fnv1a64(w.str());
  w.u64(checksum);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename checkpoint into place: " + ec.message());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  Reader r(read_all(path));
  return parse_header(r);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path, const std::optional<ArchConfig>& expected,
                               CheckpointHeader* header_out) {
  Reader r(read_all(path));
  const CheckpointHeader header = parse_header(r);
  if (expected && !(header.arch == *expected)) {
    throw InputError("checkpoint architecture mismatch: file has " + describe(header.arch) +
                     ", expected " + describe(*expected));
  }
  try {
    header.arch.validate();
  } catch (const InputError& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }

  ModelParams<T> params(header.arch);
  const auto& tensors = params.layout().tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size()) {
    throw ParseError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                     std::to_string(tensors.size()));
  }
  for (const auto& t : tensors) {
    const std::uint32_t len = r.u32();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (name != t.name || rows != t.rows || cols != t.cols) {
      throw ParseError("checkpoint tensor " + name + " [" + std::to_string(rows) + "x" +
                       std::to_string(cols) + "] does not match expected " + t.name + " [" +
                       std::to_string(t.rows) + "x" + std::to_string(t.cols) + "]");
    }
    for (std::size_t i = 0; i < t.size(); ++i) params.values()[t.offset + i] = static_cast<T>(r.f64());
  }
  const std::size_t payload_end = r.pos();
  const std::uint64_t stored = r.u64();
  if (stored != fnv1a64(std::string_view(r.data()).substr(0, payload_end))) {
    throw ParseError("checkpoint checksum mismatch");
  }
  if (r.pos() != r.data().size()) throw ParseError("trailing bytes after checkpoint");
  if (header_out) *header_out = header;
  return params;
}

template void save_checkpoint<float>(const ModelParams<float>&, std::uint64_t, const std::filesystem::path&);
template void save_checkpoint<double>(const ModelParams<double>&, std::uint64_t, const std::filesystem::path&);
template ModelParams<float> load_checkpoint<float>(const std::filesystem::path&, const std::optional<ArchConfig>&,
                                                   CheckpointHeader*);
template ModelParams<double> load_checkpoint<double>(const std::filesystem::path&,
                                                     const std::optional<ArchConfig>&, CheckpointHeader*);

}  // namespace foreranker
