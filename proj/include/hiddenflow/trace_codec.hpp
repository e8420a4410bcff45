#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hiddenflow/core_model.hpp"

namespace hiddenflow {

/// An ordered packet capture.
struct Trace {
    std::vector<ParsedPacket> packets;
    double capture_duration = 0.0;
    std::string label;

    /// Last minus first timestamp, 0 when empty.
    double span_seconds() const noexcept;
};

/// Reads a classic libpcap file (microsecond magic, either byte order,
/// Ethernet link type). Throws MalformedHeader or TruncatedRecord.
Trace read_pcap(std::span<const std::uint8_t> bytes);

/// Writes a little-endian classic libpcap file. Every IP-bearing packet
/// must carry both addresses, otherwise UnresolvedHost is thrown.
std::vector<std::uint8_t> write_pcap(const Trace& trace);

/// Dissects one Ethernet frame. Never throws; anything it cannot decode
/// becomes transport Other with no application selector.
ParsedPacket dissect(std::span<const std::uint8_t> frame, Timestamp ts);

/// Synthesizes the Ethernet frame `write_pcap` stores for `pkt`. The frame
/// is padded towards pkt.wire_len when that is larger than the natural size.
std::vector<std::uint8_t> encode_frame(const ParsedPacket& pkt);

/// Keeps the packets whose control_plane flag is false, in order.
Trace filter_control_plane(const Trace& trace);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::string& path, const std::string& text);

}  // namespace hiddenflow
