#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace hiddenflow {

/// An IPv4 or IPv6 address stored in network byte order.
class IpAddress {
public:
    enum class Family : std::uint8_t { V4, V6 };

    IpAddress() = default;

    static IpAddress v4(std::uint32_t host_order);
    static IpAddress v4(std::span<const std::uint8_t, 4> bytes);
    static IpAddress v6(std::span<const std::uint8_t, 16> bytes);

    /// Parses a dotted-quad or RFC 4291 literal. Returns nothing on failure.
    static std::optional<IpAddress> parse(std::string_view text);

    Family family() const noexcept { return family_; }
    bool is_v4() const noexcept { return family_ == Family::V4; }

    /// 4 or 16 bytes, network order.
    std::span<const std::uint8_t> bytes() const noexcept {
        return {bytes_.data(), is_v4() ? std::size_t{4} : std::size_t{16}};
    }

    std::uint32_t v4_value() const noexcept;

    bool is_broadcast() const noexcept;
    bool is_multicast() const noexcept;

    std::string to_string() const;

    friend bool operator==(const IpAddress&, const IpAddress&) = default;
    friend auto operator<=>(const IpAddress&, const IpAddress&) = default;

private:
    Family family_ = Family::V4;
    std::array<std::uint8_t, 16> bytes_{};
};

/// An address prefix such as 192.168.1.0/24.
class Cidr {
public:
    Cidr() = default;
    Cidr(IpAddress base, int prefix_len);

    static std::optional<Cidr> parse(std::string_view text);

    bool contains(const IpAddress& addr) const noexcept;
    bool overlaps(const Cidr& other) const noexcept;

    const IpAddress& base() const noexcept { return base_; }
    int prefix_len() const noexcept { return prefix_len_; }

    std::string to_string() const;

    friend bool operator==(const Cidr&, const Cidr&) = default;

private:
    IpAddress base_;
    int prefix_len_ = 0;
};

}  // namespace hiddenflow
