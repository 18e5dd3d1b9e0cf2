#include "oracles.hpp"

namespace oracle {

std::uint16_t ip_checksum(const std::vector<std::uint8_t>& header) {
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i + 1 < header.size(); i += 2) {
    sum += static_cast<std::uint64_t>(header[i]) * 256 + header[i + 1];
  }
  if (header.size() % 2) sum += static_cast<std::uint64_t>(header.back()) * 256;
  while (sum > 0xffff) sum = (sum % 65536) + (sum / 65536);
  return static_cast<std::uint16_t>(0xffff - sum);
}

std::uint32_t fnv1a32(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t h = 2166136261u;
  for (std::uint8_t b : bytes) {
    h = h ^ b;
    h = static_cast<std::uint32_t>(static_cast<std::uint64_t>(h) * 16777619u);
  }
  return h;
}

std::vector<std::uint8_t> tuple_bytes(std::uint32_t src, std::uint32_t dst,
                                      std::uint16_t sport, std::uint16_t dport,
                                      std::uint8_t proto) {
  std::vector<std::uint8_t> b;
  for (int s = 24; s >= 0; s -= 8) b.push_back((src >> s) & 0xff);
  for (int s = 24; s >= 0; s -= 8) b.push_back((dst >> s) & 0xff);
  b.push_back(sport >> 8);
  b.push_back(sport & 0xff);
  b.push_back(dport >> 8);
  b.push_back(dport & 0xff);
  b.push_back(proto);
  return b;
}

std::uint16_t udp_source_port(std::uint32_t src, std::uint32_t dst,
                              std::uint16_t sport, std::uint16_t dport,
                              std::uint8_t proto) {
  const std::uint32_t h = fnv1a32(tuple_bytes(src, dst, sport, dport, proto));
  return static_cast<std::uint16_t>(49152 + h % 16384);
}

}  // namespace oracle
