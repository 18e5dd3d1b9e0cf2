#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace oncache {

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;
using MutableByteSpan = std::span<std::uint8_t>;

inline constexpr std::uint16_t kEtherTypeIpv4 = 0x0800;
inline constexpr std::uint8_t kIpProtoIcmp = 1;
inline constexpr std::uint8_t kIpProtoTcp = 6;
inline constexpr std::uint8_t kIpProtoUdp = 17;
inline constexpr std::uint16_t kVxlanPort = 4789;

inline constexpr std::size_t kEthHeaderLen = 14;
inline constexpr std::size_t kIpv4HeaderLen = 20;
inline constexpr std::size_t kUdpHeaderLen = 8;
inline constexpr std::size_t kTcpHeaderLen = 20;
inline constexpr std::size_t kIcmpHeaderLen = 8;
inline constexpr std::size_t kVxlanHeaderLen = 8;

// Outer Ethernet + IPv4 + UDP + VXLAN.
inline constexpr std::size_t kVxlanOverhead = 50;
// Outer headers plus the inner Ethernet header.
inline constexpr std::size_t kHeaderTemplateLen = 64;

inline constexpr std::uint8_t kTosMissBit = 0x04;
inline constexpr std::uint8_t kTosSteadyBit = 0x08;
inline constexpr std::uint8_t kTosMarkMask = kTosMissBit | kTosSteadyBit;

inline constexpr std::uint8_t kVxlanFlagI = 0x08;

// Reserved IPv4 flag bit. On the inner header of a tunnel frame: the
// identification carries a restore key. On the outer header: the sender has
// no restore key for the inner destination yet.
inline constexpr std::uint16_t kIpFlagKeyCarried = 0x8000;
inline constexpr std::uint16_t kIpFlagKeyWanted = 0x8000;

// Network byte order accessors over raw buffers.
inline std::uint16_t load_be16(ByteSpan b, std::size_t off) {
  return static_cast<std::uint16_t>((b[off] << 8) | b[off + 1]);
}
inline std::uint32_t load_be32(ByteSpan b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}
inline void store_be16(MutableByteSpan b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v >> 8);
  b[off + 1] = static_cast<std::uint8_t>(v);
}
inline void store_be32(MutableByteSpan b, std::size_t off, std::uint32_t v) {
  b[off] = static_cast<std::uint8_t>(v >> 24);
  b[off + 1] = static_cast<std::uint8_t>(v >> 16);
  b[off + 2] = static_cast<std::uint8_t>(v >> 8);
  b[off + 3] = static_cast<std::uint8_t>(v);
}

class MacAddr {
 public:
  constexpr MacAddr() = default;
  constexpr explicit MacAddr(const std::array<std::uint8_t, 6>& octets)
      : octets_(octets) {}

  // Accepts "aa:bb:cc:dd:ee:ff" (either case). Throws std::invalid_argument.
  static MacAddr parse(std::string_view text);
  static MacAddr read(ByteSpan b, std::size_t off);

  void write(MutableByteSpan b, std::size_t off) const;
  std::string to_string() const;
  bool is_zero() const;
  const std::array<std::uint8_t, 6>& octets() const { return octets_; }

  auto operator<=>(const MacAddr&) const = default;

 private:
  std::array<std::uint8_t, 6> octets_{};
};

// IPv4 address held in host byte order.
class Ipv4Addr {
 public:
  constexpr Ipv4Addr() = default;
  constexpr explicit Ipv4Addr(std::uint32_t host_order) : value_(host_order) {}
  constexpr Ipv4Addr(std::uint8_t a, std::uint8_t b, std::uint8_t c,
                     std::uint8_t d)
      : value_((std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) |
               (std::uint32_t{c} << 8) | std::uint32_t{d}) {}

  static Ipv4Addr parse(std::string_view text);

  constexpr std::uint32_t value() const { return value_; }
  std::string to_string() const;

  auto operator<=>(const Ipv4Addr&) const = default;

 private:
  std::uint32_t value_ = 0;
};

struct EthernetHeader {
  MacAddr dst;
  MacAddr src;
  std::uint16_t ether_type = kEtherTypeIpv4;

  static EthernetHeader read(ByteSpan b, std::size_t off);
  void write(MutableByteSpan b, std::size_t off) const;
  bool operator==(const EthernetHeader&) const = default;
};

struct Ipv4Header {
  std::uint8_t version = 4;
  std::uint8_t ihl = 5;
  std::uint8_t tos = 0;
  std::uint16_t total_length = 0;
  std::uint16_t identification = 0;
  std::uint16_t flags_fragment = 0;
  std::uint8_t ttl = 64;
  std::uint8_t protocol = 0;
  std::uint16_t header_checksum = 0;
  Ipv4Addr src;
  Ipv4Addr dst;

  static Ipv4Header read(ByteSpan b, std::size_t off);
  // Writes the header verbatim, including header_checksum.
  void write(MutableByteSpan b, std::size_t off) const;
  bool operator==(const Ipv4Header&) const = default;
};

struct UdpHeader {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint16_t length = kUdpHeaderLen;
  std::uint16_t checksum = 0;

  static UdpHeader read(ByteSpan b, std::size_t off);
  void write(MutableByteSpan b, std::size_t off) const;
  bool operator==(const UdpHeader&) const = default;
};

struct TcpHeader {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint8_t data_offset = 5;  // 32-bit words
  std::uint8_t flags = 0;
  std::uint16_t window = 65535;
  std::uint16_t checksum = 0;
  std::uint16_t urgent = 0;

  static TcpHeader read(ByteSpan b, std::size_t off);
  void write(MutableByteSpan b, std::size_t off) const;
  bool operator==(const TcpHeader&) const = default;
};

struct IcmpHeader {
  std::uint8_t type = 8;
  std::uint8_t code = 0;
  std::uint16_t checksum = 0;
  std::uint16_t id = 0;
  std::uint16_t seq = 0;

  static IcmpHeader read(ByteSpan b, std::size_t off);
  void write(MutableByteSpan b, std::size_t off) const;
  bool operator==(const IcmpHeader&) const = default;
};

struct VxlanHeader {
  std::uint8_t flags = kVxlanFlagI;
  std::uint32_t vni = 0;  // 24 bits

  static VxlanHeader read(ByteSpan b, std::size_t off);
  void write(MutableByteSpan b, std::size_t off) const;
  bool operator==(const VxlanHeader&) const = default;
};

inline constexpr std::size_t kFiveTupleWireLen = 13;

// Flow identity. ICMP flows carry ports (0, 0).
struct FiveTuple {
  Ipv4Addr src_ip;
  Ipv4Addr dst_ip;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t protocol = 0;

  // src ip, dst ip, src port, dst port, protocol; network byte order.
  std::array<std::uint8_t, kFiveTupleWireLen> serialize() const;
  FiveTuple reversed() const {
    return {dst_ip, src_ip, dst_port, src_port, protocol};
  }
  std::string to_string() const;

  auto operator<=>(const FiveTuple&) const = default;
};

// FNV-1a (32-bit) over the 13-byte serialized tuple.
std::uint32_t flow_hash(const FiveTuple& tuple);

// 49152 + (flow_hash mod 16384).
std::uint16_t outer_udp_source_port(const FiveTuple& tuple);

struct FiveTupleHash {
  std::size_t operator()(const FiveTuple& t) const { return flow_hash(t); }
};

enum class FrameErrc {
  kTruncated,
  kMalformed,
  kUnsupportedIpOptions,
  kNoSuchHeader,
  kNotATunnel,
};

class FrameError : public std::runtime_error {
 public:
  FrameError(FrameErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  FrameErrc code() const { return code_; }

 private:
  FrameErrc code_;
};

// Selects which IPv4 header a mark/read operation targets: the one right
// after the frame's first Ethernet header, or the inner one of a VXLAN frame
// (Ethernet at offset 50).
enum class IpLayer { kOuter, kInner };

// Layered view over an owned, contiguous frame. Offsets are absolute byte
// positions into bytes().
class ParsedFrame {
 public:
  ParsedFrame() = default;

  const Bytes& bytes() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }
  bool is_tunnel() const { return is_tunnel_; }

  std::size_t outer_eth() const { return 0; }
  std::optional<std::size_t> outer_ip() const { return outer_ip_; }
  // UDP on tunnel frames; whatever transport the frame carries otherwise.
  std::optional<std::size_t> outer_l4() const { return outer_l4_; }
  std::optional<std::size_t> vxlan() const { return vxlan_; }
  std::optional<std::size_t> inner_eth() const { return inner_eth_; }
  std::optional<std::size_t> inner_ip() const { return inner_ip_; }
  std::optional<std::size_t> inner_l4() const { return inner_l4_; }

  std::optional<std::size_t> eth_offset(IpLayer layer) const;
  std::optional<std::size_t> ip_offset(IpLayer layer) const;
  std::optional<std::size_t> l4_offset(IpLayer layer) const;

  // The layer that carries the container packet: inner for tunnel frames.
  IpLayer payload_layer() const {
    return is_tunnel_ ? IpLayer::kInner : IpLayer::kOuter;
  }

  EthernetHeader ethernet(IpLayer layer) const;
  Ipv4Header ip_header(IpLayer layer) const;
  VxlanHeader vxlan_header() const;
  // Transport tuple of the given layer; nullopt for non-TCP/UDP/ICMP payloads.
  std::optional<FiveTuple> five_tuple(IpLayer layer) const;
  // Transport payload (after the TCP/UDP/ICMP header) of the given layer.
  ByteSpan l4_payload(IpLayer layer) const;

  // Structural change helpers. Each keeps offsets valid.
  void set_ethernet(IpLayer layer, const EthernetHeader& eth);
  // Writes the header and recomputes its checksum.
  void set_ip_header(IpLayer layer, Ipv4Header header);
  // Recomputes the TCP/UDP/ICMP checksum of the given layer.
  void refresh_l4_checksum(IpLayer layer);

  // Raw access for template writes. Callers that change lengths or protocol
  // fields must re-parse.
  MutableByteSpan mutable_bytes() { return bytes_; }

  friend ParsedFrame parse_frame(Bytes bytes);

  bool operator==(const ParsedFrame&) const = default;

 private:
  Bytes bytes_;
  std::optional<std::size_t> outer_ip_;
  std::optional<std::size_t> outer_l4_;
  std::optional<std::size_t> vxlan_;
  std::optional<std::size_t> inner_eth_;
  std::optional<std::size_t> inner_ip_;
  std::optional<std::size_t> inner_l4_;
  bool is_tunnel_ = false;
};

// Throws FrameError(kTruncated) when the buffer is shorter than a header it
// claims to carry, and FrameError(kUnsupportedIpOptions) for ihl != 5.
// Non-IPv4 EtherTypes parse with only the Ethernet layer populated.
ParsedFrame parse_frame(Bytes bytes);
Bytes serialize_frame(const ParsedFrame& frame);

// 16-bit one's-complement sum of big-endian words, folded; 'initial' lets
// callers chain pseudo headers.
std::uint16_t ones_complement_sum(ByteSpan data, std::uint32_t initial = 0);

// Complement of the folded sum over exactly 20 header bytes whose checksum
// field is zero. Throws std::invalid_argument on any other length.
std::uint16_t ipv4_header_checksum(ByteSpan header);

// TCP/UDP/ICMP checksum. `segment` is the transport header plus payload with
// the checksum field zeroed. ICMP does not use a pseudo header.
std::uint16_t transport_checksum(Ipv4Addr src, Ipv4Addr dst,
                                 std::uint8_t protocol, ByteSpan segment);

// True when the IPv4 header at `off` sums to 0xFFFF.
bool ipv4_checksum_valid(ByteSpan frame, std::size_t off);

struct TosMarks {
  bool miss = false;
  bool steady = false;
  bool operator==(const TosMarks&) const = default;
};

// Sets bits 0x04/0x08 of the selected header's tos to `marks`, leaving every
// other tos bit alone, and recomputes that header's checksum.
void apply_tos_marks(ParsedFrame& frame, IpLayer layer, TosMarks marks);
TosMarks read_tos_marks(const ParsedFrame& frame, IpLayer layer);

// Container-side frame construction.
struct TransportSpec {
  std::uint8_t protocol = kIpProtoTcp;
  std::uint16_t src_port = 0;  // ICMP: echo id
  std::uint16_t dst_port = 0;
  std::uint32_t tcp_seq = 0;  // ICMP: echo seq (low 16 bits)
  std::uint32_t tcp_ack = 0;
  std::uint8_t tcp_flags = 0x18;  // PSH|ACK
  std::uint8_t icmp_type = 8;
};

struct ContainerFrameSpec {
  MacAddr dst_mac;
  MacAddr src_mac;
  Ipv4Addr src_ip;
  Ipv4Addr dst_ip;
  std::uint8_t tos = 0;
  std::uint16_t ip_id = 0;
  std::uint8_t ttl = 64;
  TransportSpec transport;
  Bytes payload;
};

// Builds Ethernet + IPv4 + TCP/UDP/ICMP with valid checksums.
ParsedFrame build_container_frame(const ContainerFrameSpec& spec);

}  // namespace oncache
