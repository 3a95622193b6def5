#include "qlink/tag_io.hpp"

#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace qlink {

namespace {

constexpr char kMagic[4] = {'Q', 'T', 'T', '1'};
constexpr size_t kHeaderSize = 24;
constexpr size_t kRecordSize = 9;

bool wants_csv(const std::string& path, TagFileFormat format) {
  if (format == TagFileFormat::csv) return true;
  if (format == TagFileFormat::binary) return false;
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
}

void put_u64le(unsigned char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

void put_u32le(unsigned char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

void write_header(std::FILE* f, std::uint64_t bin_width_fs, std::uint32_t channel_count) {
  unsigned char header[kHeaderSize] = {};
  std::memcpy(header, kMagic, 4);
  put_u64le(header + 4, bin_width_fs);
  put_u32le(header + 12, channel_count);
  if (std::fwrite(header, 1, kHeaderSize, f) != kHeaderSize) {
    throw std::runtime_error("tag file: short header write");
  }
}

TimeTagStream read_csv(std::FILE* f, const std::string& path) {
  TimeTagStream stream;
  char line[256];
  bool first = true;
  std::uint64_t lineno = 0;
  while (std::fgets(line, sizeof line, f)) {
    ++lineno;
    if (line[0] == '\n' || line[0] == '#') continue;
    if (first) {
      first = false;
      if (std::strncmp(line, "bin_index", 9) == 0) continue;
    }
    std::uint64_t bin;
    unsigned ch;
    if (std::sscanf(line, "%llu,%u", reinterpret_cast<unsigned long long*>(&bin), &ch) != 2 ||
        ch > 255) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'bin_index,channel'");
    }
    stream.bins.push_back(bin);
    stream.channels.push_back(static_cast<std::uint8_t>(ch));
  }
  return stream;
}

}  // namespace

void write_tag_file(const TimeTagStream& stream, const std::string& path, TagFileFormat format) {
  TagFileWriter writer(path, stream.bin_width_fs, stream.channel_count, format);
  writer.append(stream);
  writer.close();
}

TimeTagStream read_tag_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open tag file: " + path);
  struct Closer {
    std::FILE* f;
    ~Closer() { if (f) std::fclose(f); }
  } closer{f};

  unsigned char header[kHeaderSize];
  const size_t got = std::fread(header, 1, kHeaderSize, f);
  if (got >= 4 && std::memcmp(header, kMagic, 4) == 0) {
    if (got != kHeaderSize) throw std::runtime_error(path + ": truncated header");
    TimeTagStream stream;
    stream.bin_width_fs = get_u64le(header + 4);
    stream.channel_count = get_u32le(header + 12);
    if (stream.bin_width_fs == 0) throw std::runtime_error(path + ": zero bin width");
    std::vector<unsigned char> buf(kRecordSize * 65536);
    for (;;) {
      const size_t n = std::fread(buf.data(), 1, buf.size(), f);
      if (n == 0) break;
      if (n % kRecordSize != 0) throw std::runtime_error(path + ": truncated record");
      const size_t records = n / kRecordSize;
      const size_t base = stream.bins.size();
      stream.bins.resize(base + records);
      stream.channels.resize(base + records);
      for (size_t i = 0; i < records; ++i) {
        stream.bins[base + i] = get_u64le(&buf[i * kRecordSize]);
        stream.channels[base + i] = buf[i * kRecordSize + 8];
      }
      if (n < buf.size()) break;
    }
    return stream;
  }

  // Not the binary magic: parse as CSV from the start.
  std::rewind(f);
  TimeTagStream stream = read_csv(f, path);
  return stream;
}

TagFileReader::TagFileReader(const std::string& path) : path_(path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open tag file: " + path);
  unsigned char header[kHeaderSize];
  const size_t got = std::fread(header, 1, kHeaderSize, f);
  if (got >= 4 && std::memcmp(header, kMagic, 4) == 0) {
    if (got != kHeaderSize) {
      std::fclose(f);
      throw std::runtime_error(path + ": truncated header");
    }
    bin_width_fs_ = get_u64le(header + 4);
    channel_count_ = get_u32le(header + 12);
    if (bin_width_fs_ == 0) {
      std::fclose(f);
      throw std::runtime_error(path + ": zero bin width");
    }
    data_start_ = static_cast<long>(kHeaderSize);
  } else {
    csv_ = true;
    std::rewind(f);
    data_start_ = 0;
  }
  file_ = f;
}

TagFileReader::~TagFileReader() {
  if (file_) std::fclose(static_cast<std::FILE*>(file_));
}

size_t TagFileReader::read(std::vector<std::uint64_t>& bins, std::vector<std::uint8_t>& channels,
                           size_t max_records) {
  std::FILE* f = static_cast<std::FILE*>(file_);
  if (!f || max_records == 0) return 0;
  if (csv_) {
    char line[256];
    size_t n = 0;
    while (n < max_records && std::fgets(line, sizeof line, f)) {
      ++lineno_;
      if (line[0] == '\n' || line[0] == '#') continue;
      if (std::strncmp(line, "bin_index", 9) == 0) continue;
      std::uint64_t bin;
      unsigned ch;
      if (std::sscanf(line, "%llu,%u", reinterpret_cast<unsigned long long*>(&bin), &ch) != 2 ||
          ch > 255) {
        throw std::runtime_error(path_ + ":" + std::to_string(lineno_) +
                                 ": expected 'bin_index,channel'");
      }
      bins.push_back(bin);
      channels.push_back(static_cast<std::uint8_t>(ch));
      ++n;
    }
    return n;
  }
  std::vector<unsigned char> buf(kRecordSize * std::min<size_t>(max_records, 65536));
  size_t total = 0;
  while (total < max_records) {
    const size_t want = std::min<size_t>(max_records - total, 65536) * kRecordSize;
    const size_t n = std::fread(buf.data(), 1, want, f);
    if (n == 0) break;
    if (n % kRecordSize != 0) throw std::runtime_error(path_ + ": truncated record");
    const size_t records = n / kRecordSize;
    const size_t base = bins.size();
    bins.resize(base + records);
    channels.resize(base + records);
    for (size_t i = 0; i < records; ++i) {
      bins[base + i] = get_u64le(&buf[i * kRecordSize]);
      channels[base + i] = buf[i * kRecordSize + 8];
    }
    total += records;
    if (n < want) break;
  }
  return total;
}

void TagFileReader::reset() {
  std::FILE* f = static_cast<std::FILE*>(file_);
  if (!f) return;
  if (std::fseek(f, data_start_, SEEK_SET) != 0) {
    throw std::runtime_error("cannot rewind tag file: " + path_);
  }
  lineno_ = 0;
}

TagFileWriter::TagFileWriter(const std::string& path, std::uint64_t bin_width_fs,
                             std::uint32_t channel_count, TagFileFormat format)
    : path_(path) {
  csv_ = wants_csv(path, format);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot write tag file: " + path);
  file_ = f;
  if (csv_) {
    std::fputs("bin_index,channel\n", f);
  } else {
    write_header(f, bin_width_fs, channel_count);
  }
}

TagFileWriter::~TagFileWriter() {
  if (file_) std::fclose(static_cast<std::FILE*>(file_));
}

void TagFileWriter::append(const std::uint64_t* bins, const std::uint8_t* channels, size_t n) {
  if (!file_) throw std::runtime_error("tag file already closed: " + path_);
  std::FILE* f = static_cast<std::FILE*>(file_);
  if (csv_) {
    for (size_t i = 0; i < n; ++i) {
      std::fprintf(f, "%llu,%u\n", static_cast<unsigned long long>(bins[i]),
                   static_cast<unsigned>(channels[i]));
    }
  } else {
    std::vector<unsigned char> buf(kRecordSize * std::min<size_t>(n, 65536));
    size_t done = 0;
    while (done < n) {
      const size_t batch = std::min<size_t>(n - done, 65536);
      for (size_t i = 0; i < batch; ++i) {
        put_u64le(&buf[i * kRecordSize], bins[done + i]);
        buf[i * kRecordSize + 8] = channels[done + i];
      }
      if (std::fwrite(buf.data(), 1, batch * kRecordSize, f) != batch * kRecordSize) {
        throw std::runtime_error("short write to tag file: " + path_);
      }
      done += batch;
    }
  }
  written_ += n;
}

void TagFileWriter::append(const TimeTagStream& stream) {
  append(stream.bins.data(), stream.channels.data(), stream.bins.size());
}

void TagFileWriter::close() {
  if (!file_) return;
  std::FILE* f = static_cast<std::FILE*>(file_);
  file_ = nullptr;
  if (std::fclose(f) != 0) throw std::runtime_error("error closing tag file: " + path_);
}

}  // namespace qlink
