#pragma once

// Hashing, signatures and the length-prefixed canonical byte encoding shared by
// mutations, quotes, credentials and audit records.
//
// Canonical encoding: every field is written as a 4-byte big-endian length
// followed by the raw bytes; integers are 8-byte big-endian. Field order is
// fixed by each writer and never depends on map iteration order.

#include <sodium.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ehv {

using Bytes = std::vector<std::uint8_t>;

struct Digest {
  std::array<std::uint8_t, 32> bytes{};

  auto operator<=>(const Digest&) const = default;
  bool operator==(const Digest&) const = default;

  std::string hex() const;
  static Digest from_hex(std::string_view hex);
};

namespace detail {

inline void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw std::runtime_error("libsodium initialisation failed");
}

inline int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace detail

inline std::string to_hex(std::span<const std::uint8_t> data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

inline Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw std::invalid_argument("odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = detail::hex_nibble(hex[2 * i]);
    int lo = detail::hex_nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw std::invalid_argument("invalid hex digit");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

inline std::string Digest::hex() const { return to_hex(bytes); }

inline Digest Digest::from_hex(std::string_view hex) {
  Bytes raw = ehv::from_hex(hex);
  if (raw.size() != 32) throw std::invalid_argument("digest must be 32 bytes");
  Digest d;
  std::memcpy(d.bytes.data(), raw.data(), 32);
  return d;
}

inline Digest sha256(std::span<const std::uint8_t> data) {
  detail::ensure_sodium();
  Digest d;
  crypto_hash_sha256(d.bytes.data(), data.data(), data.size());
  return d;
}

inline Digest sha256(std::string_view text) {
  return sha256(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Digest sha256_pair(const Digest& left, const Digest& right) {
  std::array<std::uint8_t, 64> buf;
  std::memcpy(buf.data(), left.bytes.data(), 32);
  std::memcpy(buf.data() + 32, right.bytes.data(), 32);
  return sha256(buf);
}

/// Appends canonical fields to a byte buffer.
class ByteWriter {
 public:
  ByteWriter& tag(std::string_view magic) {
    buf_.insert(buf_.end(), magic.begin(), magic.end());
    return *this;
  }
  ByteWriter& u32(std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
    return *this;
  }
  ByteWriter& u64(std::uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
    return *this;
  }
  ByteWriter& i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }
  ByteWriter& bytes(std::span<const std::uint8_t> data) {
    u32(static_cast<std::uint32_t>(data.size()));
    buf_.insert(buf_.end(), data.begin(), data.end());
    return *this;
  }
  ByteWriter& str(std::string_view s) {
    return bytes(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  ByteWriter& digest(const Digest& d) {
    buf_.insert(buf_.end(), d.bytes.begin(), d.bytes.end());
    return *this;
  }

  const Bytes& data() const& { return buf_; }
  Bytes take() && { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Reads fields written by ByteWriter; throws std::runtime_error on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  void expect_tag(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0)
      throw std::runtime_error("bad record tag");
    pos_ += magic.size();
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  Bytes bytes() {
    std::uint32_t n = u32();
    need(n);
    Bytes out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }
  std::string str() {
    Bytes b = bytes();
    return std::string(b.begin(), b.end());
  }
  Digest digest() {
    need(32);
    Digest d;
    std::memcpy(d.bytes.data(), data_.data() + pos_, 32);
    pos_ += 32;
    return d;
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw std::runtime_error("truncated record");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// Ed25519 via libsodium. Signing is deterministic, so fixed seeds give
// reproducible signatures in tests and simulations.

struct PublicKey {
  std::array<std::uint8_t, crypto_sign_PUBLICKEYBYTES> bytes{};
  auto operator<=>(const PublicKey&) const = default;
  bool operator==(const PublicKey&) const = default;
};

using Signature = std::array<std::uint8_t, crypto_sign_BYTES>;

class KeyPair {
 public:
  /// Derives a key pair from a label; same label, same key.
  static KeyPair from_seed(std::string_view label) {
    detail::ensure_sodium();
    Digest seed = sha256(label);
    KeyPair kp;
    crypto_sign_seed_keypair(kp.pub_.bytes.data(), kp.secret_.data(), seed.bytes.data());
    return kp;
  }

  const PublicKey& public_key() const { return pub_; }

  Signature sign(std::span<const std::uint8_t> message) const {
    Signature sig{};
    crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), secret_.data());
    return sig;
  }

 private:
  KeyPair() = default;
  PublicKey pub_;
  std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES> secret_{};
};

inline bool verify_signature(const PublicKey& key, std::span<const std::uint8_t> message,
                             const Signature& sig) {
  detail::ensure_sodium();
  return crypto_sign_verify_detached(sig.data(), message.data(), message.size(),
                                     key.bytes.data()) == 0;
}

inline Signature signature_from_hex(std::string_view hex) {
  Bytes raw = from_hex(hex);
  Signature sig{};
  if (raw.size() != sig.size()) throw std::invalid_argument("signature must be 64 bytes");
  std::memcpy(sig.data(), raw.data(), sig.size());
  return sig;
}

}  // namespace ehv
