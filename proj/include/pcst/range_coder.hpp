#pragma once

// Binary arithmetic coding with adaptive frequency tables (integer
// implementation after Witten, Neal and Cleary).

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace pcst {

class BitWriter {
 public:
  void put(bool bit) {
    if (fill_ == 0) bytes_.push_back(0);
    if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> fill_);
    fill_ = (fill_ + 1) & 7;
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }
  std::size_t bits() const { return bytes_.size() * 8 - (fill_ ? 8 - fill_ : 0); }

 private:
  std::vector<std::uint8_t> bytes_;
  int fill_ = 0;
};

class BitReader {
 public:
  explicit BitReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  /// Past the end the stream reads as zeros; more than `slack` such bits
  /// means the input was truncated.
  bool get(std::size_t slack = 64) {
    if (pos_ >= bytes_.size() * 8) {
      if (++overrun_ > slack) throw std::runtime_error("arithmetic decoder: truncated stream");
      ++pos_;
      return false;
    }
    const bool bit = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
    ++pos_;
    return bit;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
  std::size_t overrun_ = 0;
};

/// Adaptive frequency model over a small alphabet.
class AdaptiveModel {
 public:
  explicit AdaptiveModel(std::size_t alphabet, std::uint32_t increment = 32, std::uint32_t limit = 1u << 16)
      : freq_(alphabet, 1), total_(static_cast<std::uint32_t>(alphabet)), increment_(increment), limit_(limit) {
    if (alphabet == 0) throw std::invalid_argument("AdaptiveModel: empty alphabet");
  }

  std::size_t alphabet() const { return freq_.size(); }
  std::uint32_t total() const { return total_; }

  void range(std::size_t s, std::uint32_t& lo, std::uint32_t& hi) const {
    lo = 0;
    for (std::size_t i = 0; i < s; ++i) lo += freq_[i];
    hi = lo + freq_[s];
  }

  std::size_t find(std::uint32_t target, std::uint32_t& lo, std::uint32_t& hi) const {
    lo = 0;
    for (std::size_t i = 0; i < freq_.size(); ++i) {
      if (target < lo + freq_[i]) {
        hi = lo + freq_[i];
        return i;
      }
      lo += freq_[i];
    }
    throw std::runtime_error("AdaptiveModel: target outside cumulative range");
  }

  void update(std::size_t s) {
    freq_[s] += increment_;
    total_ += increment_;
    if (total_ > limit_) {
      total_ = 0;
      for (auto& f : freq_) {
        f = (f + 1) / 2;
        total_ += f;
      }
    }
  }

 private:
  std::vector<std::uint32_t> freq_;
  std::uint32_t total_;
  std::uint32_t increment_;
  std::uint32_t limit_;
};

namespace detail {
inline constexpr std::uint64_t kTop = 0xFFFFFFFFull;
inline constexpr std::uint64_t kHalf = 0x80000000ull;
inline constexpr std::uint64_t kQuarter = 0x40000000ull;
}  // namespace detail

class ArithmeticEncoder {
 public:
  void encode(std::size_t symbol, AdaptiveModel& model) {
    std::uint32_t lo, hi;
    model.range(symbol, lo, hi);
    const std::uint64_t range = high_ - low_ + 1;
    high_ = low_ + range * hi / model.total() - 1;
    low_ = low_ + range * lo / model.total();
    for (;;) {
      if (high_ < detail::kHalf) {
        emit(false);
      } else if (low_ >= detail::kHalf) {
        emit(true);
        low_ -= detail::kHalf;
        high_ -= detail::kHalf;
      } else if (low_ >= detail::kQuarter && high_ < 3 * detail::kQuarter) {
        ++pending_;
        low_ -= detail::kQuarter;
        high_ -= detail::kQuarter;
      } else {
        break;
      }
      low_ = 2 * low_;
      high_ = 2 * high_ + 1;
    }
    model.update(symbol);
  }

  std::vector<std::uint8_t> finish() {
    ++pending_;
    emit(low_ >= detail::kQuarter);
    return out_.take();
  }

 private:
  void emit(bool bit) {
    out_.put(bit);
    for (; pending_ > 0; --pending_) out_.put(!bit);
  }

  std::uint64_t low_ = 0;
  std::uint64_t high_ = detail::kTop;
  std::size_t pending_ = 0;
  BitWriter out_;
};

class ArithmeticDecoder {
 public:
  explicit ArithmeticDecoder(const std::vector<std::uint8_t>& bytes) : in_(bytes) {
    for (int i = 0; i < 32; ++i) value_ = (value_ << 1) | (in_.get() ? 1u : 0u);
  }

  std::size_t decode(AdaptiveModel& model) {
    const std::uint64_t range = high_ - low_ + 1;
    const auto target = static_cast<std::uint32_t>(((value_ - low_ + 1) * model.total() - 1) / range);
    std::uint32_t lo, hi;
    const std::size_t symbol = model.find(target, lo, hi);
    high_ = low_ + range * hi / model.total() - 1;
    low_ = low_ + range * lo / model.total();
    for (;;) {
      if (high_ < detail::kHalf) {
      } else if (low_ >= detail::kHalf) {
        low_ -= detail::kHalf;
        high_ -= detail::kHalf;
        value_ -= detail::kHalf;
      } else if (low_ >= detail::kQuarter && high_ < 3 * detail::kQuarter) {
        low_ -= detail::kQuarter;
        high_ -= detail::kQuarter;
        value_ -= detail::kQuarter;
      } else {
        break;
      }
      low_ = 2 * low_;
      high_ = 2 * high_ + 1;
      value_ = 2 * value_ + (in_.get() ? 1u : 0u);
    }
    model.update(symbol);
    return symbol;
  }

 private:
  BitReader in_;
  std::uint64_t low_ = 0;
  std::uint64_t high_ = detail::kTop;
  std::uint64_t value_ = 0;
};

}  // namespace pcst
