#include "hiddenflow/ip.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <charconv>

namespace hiddenflow {

IpAddress IpAddress::v4(std::uint32_t host_order) {
    IpAddress a;
    a.family_ = Family::V4;
    a.bytes_[0] = static_cast<std::uint8_t>(host_order >> 24);
    a.bytes_[1] = static_cast<std::uint8_t>(host_order >> 16);
    a.bytes_[2] = static_cast<std::uint8_t>(host_order >> 8);
    a.bytes_[3] = static_cast<std::uint8_t>(host_order);
    return a;
}

IpAddress IpAddress::v4(std::span<const std::uint8_t, 4> bytes) {
    IpAddress a;
    a.family_ = Family::V4;
    std::copy(bytes.begin(), bytes.end(), a.bytes_.begin());
    return a;
}

IpAddress IpAddress::v6(std::span<const std::uint8_t, 16> bytes) {
    IpAddress a;
    a.family_ = Family::V6;
    std::copy(bytes.begin(), bytes.end(), a.bytes_.begin());
    return a;
}

std::optional<IpAddress> IpAddress::parse(std::string_view text) {
    if (text.empty() || text.size() > 45) return std::nullopt;
    std::string s(text);
    std::array<std::uint8_t, 16> buf{};
    if (s.find(':') == std::string::npos) {
        if (inet_pton(AF_INET, s.c_str(), buf.data()) != 1) return std::nullopt;
        return v4(std::span<const std::uint8_t, 4>(buf.data(), 4));
    }
    if (inet_pton(AF_INET6, s.c_str(), buf.data()) != 1) return std::nullopt;
    return v6(std::span<const std::uint8_t, 16>(buf.data(), 16));
}

std::uint32_t IpAddress::v4_value() const noexcept {
    return (std::uint32_t{bytes_[0]} << 24) | (std::uint32_t{bytes_[1]} << 16) |
           (std::uint32_t{bytes_[2]} << 8) | std::uint32_t{bytes_[3]};
}

bool IpAddress::is_broadcast() const noexcept {
    return is_v4() && v4_value() == 0xFFFFFFFFu;
}

bool IpAddress::is_multicast() const noexcept {
    if (is_v4()) return (bytes_[0] & 0xF0) == 0xE0;
    return bytes_[0] == 0xFF;
}

std::string IpAddress::to_string() const {
    char buf[INET6_ADDRSTRLEN] = {};
    inet_ntop(is_v4() ? AF_INET : AF_INET6, bytes_.data(), buf, sizeof buf);
    return buf;
}

Cidr::Cidr(IpAddress base, int prefix_len) : base_(base), prefix_len_(prefix_len) {}

std::optional<Cidr> Cidr::parse(std::string_view text) {
    auto slash = text.find('/');
    if (slash == std::string_view::npos) return std::nullopt;
    auto addr = IpAddress::parse(text.substr(0, slash));
    if (!addr) return std::nullopt;
    auto len_text = text.substr(slash + 1);
    int len = -1;
    auto [ptr, ec] = std::from_chars(len_text.data(), len_text.data() + len_text.size(), len);
    if (ec != std::errc{} || ptr != len_text.data() + len_text.size()) return std::nullopt;
    int max_len = addr->is_v4() ? 32 : 128;
    if (len < 0 || len > max_len) return std::nullopt;
    return Cidr(*addr, len);
}

namespace {

bool prefix_equal(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, int bits) {
    int full = bits / 8;
    for (int i = 0; i < full; ++i)
        if (a[i] != b[i]) return false;
    int rem = bits % 8;
    if (rem == 0) return true;
    auto mask = static_cast<std::uint8_t>(0xFF << (8 - rem));
    return (a[full] & mask) == (b[full] & mask);
}

}  // namespace

bool Cidr::contains(const IpAddress& addr) const noexcept {
    if (addr.family() != base_.family()) return false;
    return prefix_equal(base_.bytes(), addr.bytes(), prefix_len_);
}

bool Cidr::overlaps(const Cidr& other) const noexcept {
    if (other.base_.family() != base_.family()) return false;
    return prefix_equal(base_.bytes(), other.base_.bytes(), std::min(prefix_len_, other.prefix_len_));
}

std::string Cidr::to_string() const {
    return base_.to_string() + "/" + std::to_string(prefix_len_);
}

}  // namespace hiddenflow
