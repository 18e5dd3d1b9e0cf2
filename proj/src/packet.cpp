#include "oncache/packet.hpp"

#include <charconv>
#include <cstdio>

namespace oncache {

namespace {

[[noreturn]] void throw_truncated(const char* layer, std::size_t need,
                                  std::size_t have) {
  throw FrameError(FrameErrc::kTruncated,
                   std::string("truncated ") + layer + " header: need " +
                       std::to_string(need) + " bytes, have " +
                       std::to_string(have));
}

void require(std::size_t end, std::size_t size, const char* layer) {
  if (end > size) throw_truncated(layer, end, size);
}

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::size_t l4_header_len(std::uint8_t protocol, ByteSpan b, std::size_t off) {
  switch (protocol) {
    case kIpProtoTcp: {
      require(off + kTcpHeaderLen, b.size(), "TCP");
      std::size_t len = static_cast<std::size_t>(b[off + 12] >> 4) * 4;
      if (len < kTcpHeaderLen) {
        throw FrameError(FrameErrc::kMalformed, "TCP data offset below 5");
      }
      return len;
    }
    case kIpProtoUdp:
      return kUdpHeaderLen;
    case kIpProtoIcmp:
      return kIcmpHeaderLen;
    default:
      return 0;
  }
}

struct IpLayerOffsets {
  std::size_t ip;
  std::optional<std::size_t> l4;
  std::size_t end;  // ip + total_length
};

// Parses IPv4 + transport starting at `ip_off`.
IpLayerOffsets parse_ip_layer(ByteSpan b, std::size_t ip_off) {
  require(ip_off + kIpv4HeaderLen, b.size(), "IPv4");
  const std::uint8_t version = b[ip_off] >> 4;
  const std::uint8_t ihl = b[ip_off] & 0x0f;
  if (version != 4) {
    throw FrameError(FrameErrc::kMalformed, "IPv4 header with version " +
                                                std::to_string(version));
  }
  if (ihl != 5) {
    throw FrameError(FrameErrc::kUnsupportedIpOptions,
                     "IPv4 options are not supported (ihl=" +
                         std::to_string(ihl) + ")");
  }
  const std::size_t total = load_be16(b, ip_off + 2);
  if (total < kIpv4HeaderLen) {
    throw FrameError(FrameErrc::kMalformed, "IPv4 total_length below 20");
  }
  require(ip_off + total, b.size(), "IPv4 payload");
  const std::uint8_t protocol = b[ip_off + 9];
  const std::size_t l4_off = ip_off + kIpv4HeaderLen;
  ByteSpan ip_span = b.first(ip_off + total);
  const std::size_t l4_len = l4_header_len(protocol, ip_span, l4_off);
  IpLayerOffsets out{ip_off, std::nullopt, ip_off + total};
  if (l4_len > 0) {
    require(l4_off + l4_len, ip_off + total, "transport");
    if (protocol == kIpProtoUdp) {
      const std::size_t udp_len = load_be16(b, l4_off + 4);
      if (udp_len < kUdpHeaderLen || l4_off + udp_len > ip_off + total) {
        throw_truncated("UDP", l4_off + udp_len, ip_off + total);
      }
    }
    out.l4 = l4_off;
  }
  return out;
}

}  // namespace

// MacAddr

MacAddr MacAddr::parse(std::string_view text) {
  std::array<std::uint8_t, 6> o{};
  if (text.size() != 17) {
    throw std::invalid_argument("bad MAC address: " + std::string(text));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    const int hi = hex_digit(text[i * 3]);
    const int lo = hex_digit(text[i * 3 + 1]);
    if (hi < 0 || lo < 0 || (i < 5 && text[i * 3 + 2] != ':')) {
      throw std::invalid_argument("bad MAC address: " + std::string(text));
    }
    o[i] = static_cast<std::uint8_t>(hi * 16 + lo);
  }
  return MacAddr(o);
}

MacAddr MacAddr::read(ByteSpan b, std::size_t off) {
  std::array<std::uint8_t, 6> o{};
  for (std::size_t i = 0; i < 6; ++i) o[i] = b[off + i];
  return MacAddr(o);
}

void MacAddr::write(MutableByteSpan b, std::size_t off) const {
  for (std::size_t i = 0; i < 6; ++i) b[off + i] = octets_[i];
}

std::string MacAddr::to_string() const {
  char buf[18];
  std::snprintf(buf, sizeof(buf), "%02x:%02x:%02x:%02x:%02x:%02x", octets_[0],
                octets_[1], octets_[2], octets_[3], octets_[4], octets_[5]);
  return buf;
}

bool MacAddr::is_zero() const {
  for (auto o : octets_) {
    if (o != 0) return false;
  }
  return true;
}

// Ipv4Addr

Ipv4Addr Ipv4Addr::parse(std::string_view text) {
  std::uint32_t value = 0;
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 4; ++i) {
    unsigned octet = 0;
    auto [next, ec] = std::from_chars(p, end, octet);
    if (ec != std::errc() || octet > 255 || next == p) {
      throw std::invalid_argument("bad IPv4 address: " + std::string(text));
    }
    value = (value << 8) | octet;
    p = next;
    if (i < 3) {
      if (p == end || *p != '.') {
        throw std::invalid_argument("bad IPv4 address: " + std::string(text));
      }
      ++p;
    }
  }
  if (p != end) {
    throw std::invalid_argument("bad IPv4 address: " + std::string(text));
  }
  return Ipv4Addr(value);
}

std::string Ipv4Addr::to_string() const {
  return std::to_string(value_ >> 24) + "." +
         std::to_string((value_ >> 16) & 0xff) + "." +
         std::to_string((value_ >> 8) & 0xff) + "." +
         std::to_string(value_ & 0xff);
}

// Header codecs

EthernetHeader EthernetHeader::read(ByteSpan b, std::size_t off) {
  return {MacAddr::read(b, off), MacAddr::read(b, off + 6),
          load_be16(b, off + 12)};
}

void EthernetHeader::write(MutableByteSpan b, std::size_t off) const {
  dst.write(b, off);
  src.write(b, off + 6);
  store_be16(b, off + 12, ether_type);
}

Ipv4Header Ipv4Header::read(ByteSpan b, std::size_t off) {
  Ipv4Header h;
  h.version = b[off] >> 4;
  h.ihl = b[off] & 0x0f;
  h.tos = b[off + 1];
  h.total_length = load_be16(b, off + 2);
  h.identification = load_be16(b, off + 4);
  h.flags_fragment = load_be16(b, off + 6);
  h.ttl = b[off + 8];
  h.protocol = b[off + 9];
  h.header_checksum = load_be16(b, off + 10);
  h.src = Ipv4Addr(load_be32(b, off + 12));
  h.dst = Ipv4Addr(load_be32(b, off + 16));
  return h;
}

void Ipv4Header::write(MutableByteSpan b, std::size_t off) const {
  b[off] = static_cast<std::uint8_t>((version << 4) | (ihl & 0x0f));
  b[off + 1] = tos;
  store_be16(b, off + 2, total_length);
  store_be16(b, off + 4, identification);
  store_be16(b, off + 6, flags_fragment);
  b[off + 8] = ttl;
  b[off + 9] = protocol;
  store_be16(b, off + 10, header_checksum);
  store_be32(b, off + 12, src.value());
  store_be32(b, off + 16, dst.value());
}

UdpHeader UdpHeader::read(ByteSpan b, std::size_t off) {
  return {load_be16(b, off), load_be16(b, off + 2), load_be16(b, off + 4),
          load_be16(b, off + 6)};
}

void UdpHeader::write(MutableByteSpan b, std::size_t off) const {
  store_be16(b, off, src_port);
  store_be16(b, off + 2, dst_port);
  store_be16(b, off + 4, length);
  store_be16(b, off + 6, checksum);
}

TcpHeader TcpHeader::read(ByteSpan b, std::size_t off) {
  TcpHeader h;
  h.src_port = load_be16(b, off);
  h.dst_port = load_be16(b, off + 2);
  h.seq = load_be32(b, off + 4);
  h.ack = load_be32(b, off + 8);
  h.data_offset = b[off + 12] >> 4;
  h.flags = b[off + 13];
  h.window = load_be16(b, off + 14);
  h.checksum = load_be16(b, off + 16);
  h.urgent = load_be16(b, off + 18);
  return h;
}

void TcpHeader::write(MutableByteSpan b, std::size_t off) const {
  store_be16(b, off, src_port);
  store_be16(b, off + 2, dst_port);
  store_be32(b, off + 4, seq);
  store_be32(b, off + 8, ack);
  b[off + 12] = static_cast<std::uint8_t>(data_offset << 4);
  b[off + 13] = flags;
  store_be16(b, off + 14, window);
  store_be16(b, off + 16, checksum);
  store_be16(b, off + 18, urgent);
}

IcmpHeader IcmpHeader::read(ByteSpan b, std::size_t off) {
  return {b[off], b[off + 1], load_be16(b, off + 2), load_be16(b, off + 4),
          load_be16(b, off + 6)};
}

void IcmpHeader::write(MutableByteSpan b, std::size_t off) const {
  b[off] = type;
  b[off + 1] = code;
  store_be16(b, off + 2, checksum);
  store_be16(b, off + 4, id);
  store_be16(b, off + 6, seq);
}

VxlanHeader VxlanHeader::read(ByteSpan b, std::size_t off) {
  return {b[off], load_be32(b, off + 4) >> 8};
}

void VxlanHeader::write(MutableByteSpan b, std::size_t off) const {
  b[off] = flags;
  b[off + 1] = 0;
  b[off + 2] = 0;
  b[off + 3] = 0;
  store_be32(b, off + 4, (vni & 0xffffff) << 8);
}

// FiveTuple

std::array<std::uint8_t, kFiveTupleWireLen> FiveTuple::serialize() const {
  std::array<std::uint8_t, kFiveTupleWireLen> out{};
  store_be32(out, 0, src_ip.value());
  store_be32(out, 4, dst_ip.value());
  store_be16(out, 8, src_port);
  store_be16(out, 10, dst_port);
  out[12] = protocol;
  return out;
}

std::string FiveTuple::to_string() const {
  return std::to_string(protocol) + " " + src_ip.to_string() + ":" +
         std::to_string(src_port) + " > " + dst_ip.to_string() + ":" +
         std::to_string(dst_port);
}

std::uint32_t flow_hash(const FiveTuple& tuple) {
  std::uint32_t h = 2166136261u;
  for (std::uint8_t byte : tuple.serialize()) {
    h ^= byte;
    h *= 16777619u;
  }
  return h;
}

std::uint16_t outer_udp_source_port(const FiveTuple& tuple) {
  return static_cast<std::uint16_t>(49152u + flow_hash(tuple) % 16384u);
}

// ParsedFrame

ParsedFrame parse_frame(Bytes bytes) {
  ParsedFrame f;
  f.bytes_ = std::move(bytes);
  ByteSpan b = f.bytes_;
  require(kEthHeaderLen, b.size(), "Ethernet");
  if (load_be16(b, 12) != kEtherTypeIpv4) return f;

  const IpLayerOffsets outer = parse_ip_layer(b, kEthHeaderLen);
  f.outer_ip_ = outer.ip;
  f.outer_l4_ = outer.l4;
  const bool udp = b[outer.ip + 9] == kIpProtoUdp;
  if (!udp || !outer.l4 || load_be16(b, *outer.l4 + 2) != kVxlanPort) {
    return f;
  }

  // UDP/4789: the payload must hold VXLAN plus an inner Ethernet header.
  const std::size_t udp_end = *outer.l4 + load_be16(b, *outer.l4 + 4);
  const std::size_t vx = *outer.l4 + kUdpHeaderLen;
  require(vx + kVxlanHeaderLen, udp_end, "VXLAN");
  const std::size_t inner_eth = vx + kVxlanHeaderLen;
  require(inner_eth + kEthHeaderLen, udp_end, "inner Ethernet");
  f.is_tunnel_ = true;
  f.vxlan_ = vx;
  f.inner_eth_ = inner_eth;
  if (load_be16(b, inner_eth + 12) != kEtherTypeIpv4) return f;
  const IpLayerOffsets inner =
      parse_ip_layer(b.first(udp_end), inner_eth + kEthHeaderLen);
  f.inner_ip_ = inner.ip;
  f.inner_l4_ = inner.l4;
  return f;
}

Bytes serialize_frame(const ParsedFrame& frame) { return frame.bytes(); }

std::optional<std::size_t> ParsedFrame::eth_offset(IpLayer layer) const {
  if (layer == IpLayer::kOuter) return std::size_t{0};
  return inner_eth_;
}

std::optional<std::size_t> ParsedFrame::ip_offset(IpLayer layer) const {
  return layer == IpLayer::kOuter ? outer_ip_ : inner_ip_;
}

std::optional<std::size_t> ParsedFrame::l4_offset(IpLayer layer) const {
  return layer == IpLayer::kOuter ? outer_l4_ : inner_l4_;
}

EthernetHeader ParsedFrame::ethernet(IpLayer layer) const {
  auto off = eth_offset(layer);
  if (!off) throw FrameError(FrameErrc::kNoSuchHeader, "no inner Ethernet");
  return EthernetHeader::read(bytes_, *off);
}

Ipv4Header ParsedFrame::ip_header(IpLayer layer) const {
  auto off = ip_offset(layer);
  if (!off) throw FrameError(FrameErrc::kNoSuchHeader, "no such IPv4 header");
  return Ipv4Header::read(bytes_, *off);
}

VxlanHeader ParsedFrame::vxlan_header() const {
  if (!vxlan_) throw FrameError(FrameErrc::kNoSuchHeader, "no VXLAN header");
  return VxlanHeader::read(bytes_, *vxlan_);
}

std::optional<FiveTuple> ParsedFrame::five_tuple(IpLayer layer) const {
  auto ip = ip_offset(layer);
  auto l4 = l4_offset(layer);
  if (!ip || !l4) return std::nullopt;
  FiveTuple t;
  t.src_ip = Ipv4Addr(load_be32(bytes_, *ip + 12));
  t.dst_ip = Ipv4Addr(load_be32(bytes_, *ip + 16));
  t.protocol = bytes_[*ip + 9];
  if (t.protocol != kIpProtoIcmp) {
    t.src_port = load_be16(bytes_, *l4);
    t.dst_port = load_be16(bytes_, *l4 + 2);
  }
  return t;
}

ByteSpan ParsedFrame::l4_payload(IpLayer layer) const {
  auto ip = ip_offset(layer);
  auto l4 = l4_offset(layer);
  if (!ip || !l4) return {};
  const std::size_t end = *ip + load_be16(bytes_, *ip + 2);
  const std::size_t hdr = l4_header_len(bytes_[*ip + 9], bytes_, *l4);
  return ByteSpan(bytes_).subspan(*l4 + hdr, end - *l4 - hdr);
}

void ParsedFrame::set_ethernet(IpLayer layer, const EthernetHeader& eth) {
  auto off = eth_offset(layer);
  if (!off) throw FrameError(FrameErrc::kNoSuchHeader, "no inner Ethernet");
  eth.write(bytes_, *off);
}

void ParsedFrame::set_ip_header(IpLayer layer, Ipv4Header header) {
  auto off = ip_offset(layer);
  if (!off) throw FrameError(FrameErrc::kNoSuchHeader, "no such IPv4 header");
  header.header_checksum = 0;
  header.write(bytes_, *off);
  header.header_checksum =
      ipv4_header_checksum(ByteSpan(bytes_).subspan(*off, kIpv4HeaderLen));
  store_be16(bytes_, *off + 10, header.header_checksum);
}

void ParsedFrame::refresh_l4_checksum(IpLayer layer) {
  auto ip = ip_offset(layer);
  auto l4 = l4_offset(layer);
  if (!ip || !l4) throw FrameError(FrameErrc::kNoSuchHeader, "no transport");
  const std::uint8_t proto = bytes_[*ip + 9];
  const std::size_t end = *ip + load_be16(bytes_, *ip + 2);
  const std::size_t csum_off = proto == kIpProtoTcp   ? *l4 + 16
                               : proto == kIpProtoUdp ? *l4 + 6
                                                      : *l4 + 2;
  store_be16(bytes_, csum_off, 0);
  std::uint16_t c = transport_checksum(
      Ipv4Addr(load_be32(bytes_, *ip + 12)),
      Ipv4Addr(load_be32(bytes_, *ip + 16)), proto,
      ByteSpan(bytes_).subspan(*l4, end - *l4));
  if (proto == kIpProtoUdp && c == 0) c = 0xffff;
  store_be16(bytes_, csum_off, c);
}

// Checksums

std::uint16_t ones_complement_sum(ByteSpan data, std::uint32_t initial) {
  std::uint64_t sum = initial;
  std::size_t i = 0;
  for (; i + 1 < data.size(); i += 2) {
    sum += (std::uint32_t{data[i]} << 8) | data[i + 1];
  }
  if (i < data.size()) sum += std::uint32_t{data[i]} << 8;
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(sum);
}

std::uint16_t ipv4_header_checksum(ByteSpan header) {
  if (header.size() != kIpv4HeaderLen) {
    throw std::invalid_argument("ipv4_header_checksum needs 20 bytes, got " +
                                std::to_string(header.size()));
  }
  return static_cast<std::uint16_t>(~ones_complement_sum(header));
}

std::uint16_t transport_checksum(Ipv4Addr src, Ipv4Addr dst,
                                 std::uint8_t protocol, ByteSpan segment) {
  if (protocol == kIpProtoIcmp) {
    return static_cast<std::uint16_t>(~ones_complement_sum(segment));
  }
  std::uint32_t pseudo = (src.value() >> 16) + (src.value() & 0xffff) +
                         (dst.value() >> 16) + (dst.value() & 0xffff) +
                         protocol + static_cast<std::uint32_t>(segment.size());
  return static_cast<std::uint16_t>(~ones_complement_sum(segment, pseudo));
}

bool ipv4_checksum_valid(ByteSpan frame, std::size_t off) {
  return ones_complement_sum(frame.subspan(off, kIpv4HeaderLen)) == 0xffff;
}

// Marks

void apply_tos_marks(ParsedFrame& frame, IpLayer layer, TosMarks marks) {
  Ipv4Header h = frame.ip_header(layer);
  h.tos = static_cast<std::uint8_t>((h.tos & ~kTosMarkMask) |
                                    (marks.miss ? kTosMissBit : 0) |
                                    (marks.steady ? kTosSteadyBit : 0));
  frame.set_ip_header(layer, h);
}

TosMarks read_tos_marks(const ParsedFrame& frame, IpLayer layer) {
  const std::uint8_t tos = frame.ip_header(layer).tos;
  return {(tos & kTosMissBit) != 0, (tos & kTosSteadyBit) != 0};
}

// Construction

ParsedFrame build_container_frame(const ContainerFrameSpec& spec) {
  const auto& tp = spec.transport;
  const std::size_t l4_len = tp.protocol == kIpProtoTcp   ? kTcpHeaderLen
                             : tp.protocol == kIpProtoUdp ? kUdpHeaderLen
                                                          : kIcmpHeaderLen;
  const std::size_t ip_total = kIpv4HeaderLen + l4_len + spec.payload.size();
  if (ip_total > 0xffff) throw std::invalid_argument("payload too large");
  Bytes b(kEthHeaderLen + ip_total, 0);

  EthernetHeader{spec.dst_mac, spec.src_mac, kEtherTypeIpv4}.write(b, 0);

  Ipv4Header ip;
  ip.tos = spec.tos;
  ip.total_length = static_cast<std::uint16_t>(ip_total);
  ip.identification = spec.ip_id;
  ip.flags_fragment = 0x4000;  // DF
  ip.ttl = spec.ttl;
  ip.protocol = tp.protocol;
  ip.src = spec.src_ip;
  ip.dst = spec.dst_ip;
  ip.write(b, kEthHeaderLen);
  store_be16(b, kEthHeaderLen + 10,
             ipv4_header_checksum(ByteSpan(b).subspan(kEthHeaderLen, 20)));

  const std::size_t l4 = kEthHeaderLen + kIpv4HeaderLen;
  switch (tp.protocol) {
    case kIpProtoTcp: {
      TcpHeader t;
      t.src_port = tp.src_port;
      t.dst_port = tp.dst_port;
      t.seq = tp.tcp_seq;
      t.ack = tp.tcp_ack;
      t.flags = tp.tcp_flags;
      t.write(b, l4);
      break;
    }
    case kIpProtoUdp:
      UdpHeader{tp.src_port, tp.dst_port,
                static_cast<std::uint16_t>(kUdpHeaderLen + spec.payload.size()),
                0}
          .write(b, l4);
      break;
    case kIpProtoIcmp:
      IcmpHeader{tp.icmp_type, 0, 0, tp.src_port,
                 static_cast<std::uint16_t>(tp.tcp_seq)}
          .write(b, l4);
      break;
    default:
      throw std::invalid_argument("unsupported transport protocol " +
                                  std::to_string(tp.protocol));
  }
  std::copy(spec.payload.begin(), spec.payload.end(),
            b.begin() + static_cast<std::ptrdiff_t>(l4 + l4_len));

  ParsedFrame frame = parse_frame(std::move(b));
  frame.refresh_l4_checksum(IpLayer::kOuter);
  return frame;
}

}  // namespace oncache
