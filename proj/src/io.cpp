#include "dd/io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dd::io {

namespace {

uint32_t crc32(const uint8_t* data, size_t n) {
  static std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void put16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>(v >> 8));
}
void put32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
uint16_t get16(const std::string& s, size_t off) {
  return static_cast<uint16_t>(static_cast<uint8_t>(s[off]) |
                               (static_cast<uint8_t>(s[off + 1]) << 8));
}
uint32_t get32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[off + i])) << (8 * i);
  return v;
}

std::string npy_bytes(const NpzEntry& e) {
  std::ostringstream dict;
  dict << "{'descr': '" << (e.is_int ? "<i4" : "<f4") << "', 'fortran_order': False, 'shape': (";
  for (size_t i = 0; i < e.shape.size(); ++i) dict << e.shape[i] << (e.shape.size() == 1 ? "," : (i + 1 < e.shape.size() ? ", " : ""));
  dict << "), }";
  std::string h = dict.str();
  size_t base = 10 + h.size() + 1;  // magic+version+len + dict + newline
  size_t pad = (64 - base % 64) % 64;
  h.append(pad, ' ');
  h.push_back('\n');

  std::string out;
  out += "\x93NUMPY";
  out.push_back(1);
  out.push_back(0);
  put16(out, static_cast<uint16_t>(h.size()));
  out += h;
  if (e.is_int)
    out.append(reinterpret_cast<const char*>(e.i32.data()), e.i32.size() * 4);
  else
    out.append(reinterpret_cast<const char*>(e.f32.data()), e.f32.size() * 4);
  return out;
}

NpzEntry parse_npy(const std::string& b) {
  if (b.size() < 12 || b.compare(0, 6, "\x93NUMPY") != 0)
    throw Error("corrupt-checkpoint", "bad npy magic");
  uint16_t hlen = get16(b, 8);
  if (b.size() < 10u + hlen) throw Error("corrupt-checkpoint", "truncated npy header");
  std::string header = b.substr(10, hlen);
  NpzEntry e;
  if (header.find("'<i4'") != std::string::npos)
    e.is_int = true;
  else if (header.find("'<f4'") == std::string::npos)
    throw Error("corrupt-checkpoint", "unsupported npy dtype");
  size_t sp = header.find("'shape':");
  size_t lp = header.find('(', sp);
  size_t rp = header.find(')', lp);
  if (sp == std::string::npos || lp == std::string::npos || rp == std::string::npos)
    throw Error("corrupt-checkpoint", "bad npy shape");
  std::stringstream ss(header.substr(lp + 1, rp - lp - 1));
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.find_first_not_of(" \t") == std::string::npos) continue;
    e.shape.push_back(std::stoll(tok));
  }
  size_t n = static_cast<size_t>(Tensor::numel_of(e.shape));
  size_t off = 10 + hlen;
  if (b.size() < off + n * 4) throw Error("corrupt-checkpoint", "truncated npy data");
  if (e.is_int) {
    e.i32.resize(n);
    std::memcpy(e.i32.data(), b.data() + off, n * 4);
  } else {
    e.f32.resize(n);
    std::memcpy(e.f32.data(), b.data() + off, n * 4);
  }
  return e;
}

}  // namespace

void save_npz(const std::string& path, const std::map<std::string, NpzEntry>& entries) {
  std::string out;
  std::string central;
  uint16_t count = 0;
  for (const auto& [name, entry] : entries) {
    std::string fname = name + ".npy";
    std::string payload = npy_bytes(entry);
    uint32_t crc = crc32(reinterpret_cast<const uint8_t*>(payload.data()), payload.size());
    uint32_t offset = static_cast<uint32_t>(out.size());

    out += "PK\x03\x04";
    put16(out, 20);  // version needed
    put16(out, 0);   // flags
    put16(out, 0);   // stored
    put16(out, 0);   // mod time
    put16(out, 0);   // mod date
    put32(out, crc);
    put32(out, static_cast<uint32_t>(payload.size()));
    put32(out, static_cast<uint32_t>(payload.size()));
    put16(out, static_cast<uint16_t>(fname.size()));
    put16(out, 0);  // extra len
    out += fname;
    out += payload;

    central += "PK\x01\x02";
    put16(central, 20);
    put16(central, 20);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put32(central, crc);
    put32(central, static_cast<uint32_t>(payload.size()));
    put32(central, static_cast<uint32_t>(payload.size()));
    put16(central, static_cast<uint16_t>(fname.size()));
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put32(central, 0);
    put32(central, offset);
    central += fname;
    ++count;
  }
  uint32_t cd_off = static_cast<uint32_t>(out.size());
  out += central;
  out += "PK\x05\x06";
  put16(out, 0);
  put16(out, 0);
  put16(out, count);
  put16(out, count);
  put32(out, static_cast<uint32_t>(central.size()));
  put32(out, cd_off);
  put16(out, 0);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("io-error", "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::map<std::string, NpzEntry> load_npz(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("file-not-found", path);
  std::string b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (b.size() < 22) throw Error("corrupt-checkpoint", "truncated archive");
  size_t eocd = b.rfind("PK\x05\x06");
  if (eocd == std::string::npos) throw Error("corrupt-checkpoint", "missing end record");
  uint16_t count = get16(b, eocd + 10);
  uint32_t cd_off = get32(b, eocd + 16);
  std::map<std::string, NpzEntry> out;
  size_t p = cd_off;
  for (uint16_t i = 0; i < count; ++i) {
    if (p + 46 > b.size() || b.compare(p, 4, "PK\x01\x02") != 0)
      throw Error("corrupt-checkpoint", "bad central directory");
    uint32_t size = get32(b, p + 24);
    uint16_t name_len = get16(b, p + 28);
    uint16_t extra_len = get16(b, p + 30);
    uint16_t comment_len = get16(b, p + 32);
    uint32_t lho = get32(b, p + 42);
    std::string fname = b.substr(p + 46, name_len);
    if (lho + 30 > b.size()) throw Error("corrupt-checkpoint", "bad local offset");
    uint16_t lh_name = get16(b, lho + 26);
    uint16_t lh_extra = get16(b, lho + 28);
    size_t data_off = lho + 30 + lh_name + lh_extra;
    if (data_off + size > b.size()) throw Error("corrupt-checkpoint", "truncated member");
    std::string payload = b.substr(data_off, size);
    std::string key = fname;
    if (key.size() > 4 && key.ends_with(".npy")) key = key.substr(0, key.size() - 4);
    out[key] = parse_npy(payload);
    p += 46u + name_len + extra_len + comment_len;
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("io-error", "cannot write " + path);
  f << content;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("file-not-found", path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

int CsvTable::column(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

std::string csv_to_string(const CsvTable& table) {
  std::ostringstream os;
  for (size_t i = 0; i < table.header.size(); ++i) os << (i ? "," : "") << table.header[i];
  os << "\n";
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
  return os.str();
}

void write_csv(const std::string& path, const CsvTable& table) {
  write_text_file(path, csv_to_string(table));
}

CsvTable read_csv(const std::string& path) {
  std::istringstream is(read_text_file(path));
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      t.header = cells;
      first = false;
    } else {
      t.rows.push_back(cells);
    }
  }
  return t;
}

}  // namespace dd::io
