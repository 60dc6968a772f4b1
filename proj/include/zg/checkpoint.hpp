#pragma once

// Checkpoint container (.zgc):
//
//   "ZGC1" | u32 LE header length | JSON header | payload | u64 LE payload bytes
//
// The header records schema, arch, epoch, attack (with the current q),
// schedule, RNG lineage and the group names/shapes. The payload is every
// parameter group followed by every momentum buffer, as little-endian
// float64 in header order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "zg/engine.hpp"
#include "zg/serialize.hpp"
#include "zg/trainer.hpp"

namespace zg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'Z', 'G', 'C', '1'};
inline constexpr int kCheckpointSchema = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ArchSpec arch;
  LrSchedule schedule;
  TrainState state;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T get_le(const std::vector<char>& in, std::size_t pos) {
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  json groups = json::array();
  for (const auto& g : ck.state.params.groups) groups.push_back({{"name", g.name}, {"shape", g.value.shape()}});
  const json header = {{"schema", kCheckpointSchema},
                       {"arch", to_json(ck.arch)},
                       {"epoch", ck.state.epoch},
                       {"attack", to_json(ck.state.attack)},
                       {"schedule", to_json(ck.schedule)},
                       {"rng", to_json(ck.state.rng)},
                       {"groups", groups}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  std::uint64_t payload = 0;
  for (const ParamSet* set : {&ck.state.params, &ck.state.momentum}) {
    for (const auto& g : set->groups) {
      out.append(reinterpret_cast<const char*>(g.value.ptr()), g.value.numel() * sizeof(double));
      payload += g.value.numel() * sizeof(double);
    }
  }
  detail::put_le<std::uint64_t>(out, payload);
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& buf, const std::string& origin) {
  auto fail = [&](const std::string& what) { throw CheckpointError(origin + ": " + what); };
  if (buf.size() < 8 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) fail("bad magic at byte 0 (expected ZGC1)");
  const auto header_len = detail::get_le<std::uint32_t>(buf, 4);
  if (8 + std::size_t{header_len} + 8 > buf.size()) fail("header length " + std::to_string(header_len) + " runs past end of file");
  json header;
  try {
    header = json::parse(buf.begin() + 8, buf.begin() + 8 + header_len);
  } catch (const json::exception& e) {
    fail(std::string("corrupt header at byte 8: ") + e.what());
  }
  const int schema = header.value("schema", -1);
  if (schema != kCheckpointSchema) fail("unsupported schema " + std::to_string(schema) + " (this build reads schema 1)");

  Checkpoint ck;
  try {
    ck.arch = arch_from_json(header.at("arch"), "arch");
    ck.schedule = schedule_from_json(header.at("schedule"), "schedule");
    ck.state.attack = attack_from_json(header.at("attack"), "attack");
    ck.state.rng = lineage_from_json(header.at("rng"), "rng");
    ck.state.epoch = header.at("epoch").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(std::string("malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    fail(std::string("malformed header: ") + e.what());
  }

  const auto layout = param_layout(ck.arch);
  std::uint64_t expected = 0;
  try {
    const json& groups = header.at("groups");
    if (!groups.is_array() || groups.size() != layout.size()) {
      fail("header lists " + std::to_string(groups.size()) + " groups, arch expects " + std::to_string(layout.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto name = groups[i].at("name").get<std::string>();
      const auto shape = groups[i].at("shape").get<Shape>();
      if (name != layout[i].name || shape != layout[i].shape) {
        fail("group " + std::to_string(i) + " is " + name + shape_str(shape) + " but arch expects " + layout[i].name +
             shape_str(layout[i].shape));
      }
      expected += 2 * shape_numel(shape) * sizeof(double);
    }
  } catch (const json::exception& e) {
    fail(std::string("malformed group list: ") + e.what());
  }
  const std::size_t payload_start = 8 + header_len;
  const std::size_t payload_len = buf.size() - payload_start - 8;
  const auto footer = detail::get_le<std::uint64_t>(buf, buf.size() - 8);
  if (footer != payload_len || footer != expected) {
    fail("corrupt payload: footer says " + std::to_string(footer) + " bytes, file holds " + std::to_string(payload_len) +
         ", header shapes need " + std::to_string(expected));
  }
  std::size_t pos = payload_start;
  for (ParamSet* set : {&ck.state.params, &ck.state.momentum}) {
    for (const auto& g : layout) {
      Tensor t(g.shape);
      std::memcpy(t.ptr(), buf.data() + pos, t.numel() * sizeof(double));
      pos += t.numel() * sizeof(double);
      set->groups.push_back({g.name, std::move(t)});
    }
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ck);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(tmp.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(tmp.string() + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(path.string() + ": rename failed: " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open for reading");
  const std::vector<char> buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(buf, path.string());
}

}  // namespace zg
