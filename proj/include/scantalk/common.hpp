#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace scantalk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3>;
using SparseMatrix = Eigen::SparseMatrix<double>;

// Errors map one-to-one onto CLI exit codes: usage 1, data 2, numerical 3.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  os.precision(17);
  (os << ... << args);
  return os.str();
}

}  // namespace detail

template <class... Args>
[[noreturn]] void throw_data(Args&&... args) {
  throw DataError(detail::concat(std::forward<Args>(args)...));
}

template <class... Args>
[[noreturn]] void throw_numerical(Args&&... args) {
  throw NumericalError(detail::concat(std::forward<Args>(args)...));
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers shared by every on-disk format.

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void bytes(const void* data, std::size_t n) {
    os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!os_) throw DataError("write failure");
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  void bytes(void* data, std::size_t n) {
    is_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw_data(what_, ": truncated file");
  }
  void expect_magic(std::string_view m) {
    std::string got(m.size(), '\0');
    bytes(got.data(), got.size());
    if (got != m) throw_data(what_, ": bad magic (expected \"", m, "\")");
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    std::string s(u32(), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }
  const std::string& what() const { return what_; }

 private:
  std::istream& is_;
  std::string what_;
};

// ---------------------------------------------------------------------------
// SHA-256 content hashing.

using Digest = std::array<std::uint8_t, 32>;

class Hasher {
 public:
  Hasher() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Hasher() { EVP_MD_CTX_free(ctx_); }
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  Hasher& update(const void* data, std::size_t n) {
    EVP_DigestUpdate(ctx_, data, n);
    return *this;
  }
  template <class T>
    requires std::is_trivially_copyable_v<T>
  Hasher& value(const T& v) {
    return update(&v, sizeof v);
  }
  template <class Derived>
  Hasher& matrix(const Eigen::DenseBase<Derived>& m) {
    value(static_cast<std::uint64_t>(m.rows()));
    value(static_cast<std::uint64_t>(m.cols()));
    // Row-major traversal so the digest does not depend on storage order.
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) value(m(i, j));
    return *this;
  }
  Digest finish() {
    Digest d{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, d.data(), &len);
    return d;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string to_hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : d) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 15]);
  }
  return s;
}

inline Digest hash_bytes(std::string_view bytes) {
  return Hasher().update(bytes.data(), bytes.size()).finish();
}

// ---------------------------------------------------------------------------

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// handled by exactly one worker; callers reduce results in index order.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace scantalk
