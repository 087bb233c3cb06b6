#include "dynformer/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "dynformer/error.hpp"

namespace dynformer {

static_assert(std::endian::native == std::endian::little, "container I/O assumes little-endian");

std::string to_string(Benchmark b) {
  switch (b) {
    case Benchmark::kKs: return "1dks";
    case Benchmark::kDarcy: return "2ddarcy";
    case Benchmark::kNs: return "2dns";
    case Benchmark::kSw: return "3dsw";
  }
  return "?";
}

Benchmark parse_benchmark(const std::string& s) {
  if (s == "1dks") return Benchmark::kKs;
  if (s == "2ddarcy") return Benchmark::kDarcy;
  if (s == "2dns") return Benchmark::kNs;
  if (s == "3dsw") return Benchmark::kSw;
  throw ValidationError("unknown benchmark '" + s + "' (expected 1dks, 2ddarcy, 2dns or 3dsw)");
}

bool is_evolutionary(Benchmark b) { return b != Benchmark::kDarcy; }

void TrajectoryDataset::validate() const {
  auto fail = [&](const std::string& msg) {
    throw ValidationError(to_string(benchmark) + " dataset: " + msg);
  };
  if (channels == 0 || t_in == 0 || t_out == 0 || s1 == 0 || s2 == 0) fail("zero extent in header");
  if (benchmark == Benchmark::kSw && channels != 2) {
    fail("shallow-water data must carry 2 channels (height, vorticity), got " +
         std::to_string(channels));
  }
  if (benchmark != Benchmark::kSw && channels != 1) {
    fail("expected 1 channel, got " + std::to_string(channels));
  }
  if (benchmark == Benchmark::kDarcy && (t_in != 1 || t_out != 1)) {
    fail("Darcy samples are single frames (T_in = T_out = 1)");
  }
  if (benchmark == Benchmark::kKs && s2 != 1) fail("KS data must be stored as N x 1 grids");
  const Shape in{channels, t_in, s1, s2}, out{channels, t_out, s1, s2};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].input.shape() != in || samples[i].target.shape() != out) {
      fail("sample " + std::to_string(i) + " has shapes " + to_string(samples[i].input.shape()) +
           " / " + to_string(samples[i].target.shape()) + ", header declares " + to_string(in) +
           " / " + to_string(out));
    }
  }
}

void TrajectoryDataset::compute_extrema() {
  const double inf = std::numeric_limits<double>::infinity();
  in_min.assign(channels, inf);
  out_min.assign(channels, inf);
  in_max.assign(channels, -inf);
  out_max.assign(channels, -inf);
  auto scan = [&](const Tensor& t, std::vector<double>& lo, std::vector<double>& hi) {
    const std::size_t per = t.size() / channels;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < per; ++i) {
        lo[c] = std::min(lo[c], t[c * per + i]);
        hi[c] = std::max(hi[c], t[c * per + i]);
      }
    }
  };
  for (const auto& s : samples) {
    scan(s.input, in_min, in_max);
    scan(s.target, out_min, out_max);
  }
}

namespace {

constexpr char kMagic[8] = {'D', 'F', 'T', 'R', 'A', 'J', '0', '1'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(std::ifstream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  template <typename T>
  T get() {
    T v{};
    read(&v, sizeof(T));
    return v;
  }

  void read(void* dst, std::size_t bytes) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in_.gcount()) != bytes) {
      throw IoError("corrupt container " + path_.string() + ": truncated payload");
    }
  }

 private:
  std::ifstream& in_;
  const std::filesystem::path& path_;
};

void write_block(std::ofstream& out, const Tensor& t, StorageType storage) {
  if (storage == StorageType::kFloat64) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    std::vector<float> buf(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

Tensor read_block(Reader& r, Shape shape, StorageType storage) {
  Tensor t(std::move(shape));
  if (storage == StorageType::kFloat64) {
    r.read(t.data().data(), t.size() * sizeof(double));
  } else {
    std::vector<float> buf(t.size());
    r.read(buf.data(), buf.size() * sizeof(float));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = buf[i];
  }
  return t;
}

}  // namespace

void save_trajectories(const TrajectoryDataset& data, const std::filesystem::path& path,
                       StorageType storage) {
  data.validate();
  TrajectoryDataset copy;
  const TrajectoryDataset* src = &data;
  if (data.in_min.size() != data.channels) {
    copy = data;
    copy.compute_extrema();
    src = &copy;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(src->benchmark));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(storage));
  put<std::uint64_t>(out, src->samples.size());
  for (std::size_t v : {src->channels, src->t_in, src->t_out, src->s1, src->s2}) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  for (std::size_t c = 0; c < src->channels; ++c) {
    put(out, src->in_min[c]);
    put(out, src->in_max[c]);
    put(out, src->out_min[c]);
    put(out, src->out_max[c]);
  }
  for (const auto& s : src->samples) {
    write_block(out, s.input, storage);
    write_block(out, s.target, storage);
  }
  out.flush();
  if (!out) throw IoError("write to " + path.string() + " failed");
}

TrajectoryDataset load_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Reader r(in, path);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not a DFTRAJ01 container (bad magic or version)");
  }
  TrajectoryDataset d;
  const auto tag = r.get<std::uint32_t>();
  if (tag > static_cast<std::uint32_t>(Benchmark::kSw)) {
    throw IoError("corrupt container " + path.string() + ": unknown benchmark tag " +
                  std::to_string(tag));
  }
  d.benchmark = static_cast<Benchmark>(tag);
  const auto storage = static_cast<StorageType>(r.get<std::uint32_t>());
  if (storage != StorageType::kFloat32 && storage != StorageType::kFloat64) {
    throw IoError("corrupt container " + path.string() + ": unknown storage type");
  }
  const auto count = r.get<std::uint64_t>();
  d.channels = r.get<std::uint32_t>();
  d.t_in = r.get<std::uint32_t>();
  d.t_out = r.get<std::uint32_t>();
  d.s1 = r.get<std::uint32_t>();
  d.s2 = r.get<std::uint32_t>();
  if (d.channels == 0 || d.channels > 64) {
    throw IoError("corrupt container " + path.string() + ": implausible channel count");
  }
  for (std::size_t c = 0; c < d.channels; ++c) {
    d.in_min.push_back(r.get<double>());
    d.in_max.push_back(r.get<double>());
    d.out_min.push_back(r.get<double>());
    d.out_max.push_back(r.get<double>());
  }
  // Validate the header before sizing any payload buffers.
  {
    TrajectoryDataset header = d;
    header.validate();
  }
  const Shape in_shape{d.channels, d.t_in, d.s1, d.s2}, out_shape{d.channels, d.t_out, d.s1, d.s2};
  const std::size_t bytes = (numel(in_shape) + numel(out_shape)) *
                            (storage == StorageType::kFloat64 ? 8 : 4);
  const auto here = in.tellg();
  in.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(in.tellg() - here);
  in.seekg(here);
  if (bytes == 0 || remaining != count * bytes) {
    throw IoError("corrupt container " + path.string() + ": payload holds " +
                  std::to_string(remaining) + " bytes, header implies " +
                  std::to_string(count * bytes));
  }
  d.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    TrajectorySample s;
    s.input = read_block(r, in_shape, storage);
    s.target = read_block(r, out_shape, storage);
    d.samples.push_back(std::move(s));
  }
  return d;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                  std::size_t workers) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::size_t first_index = count;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (i < first_index) {
            first_index = i;
            first_error = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dynformer
