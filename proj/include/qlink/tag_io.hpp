#pragma once

#include <string>

#include "qlink/detection.hpp"

// Time-tag file formats.
//
// Binary (bit-exact, little-endian): 24-byte header = magic "QTT1" (4 bytes),
// bin width in femtoseconds as unsigned 64-bit, channel count as unsigned
// 32-bit, 8 reserved bytes; then repeated 9-byte records = unsigned 64-bit
// bin index + unsigned 8-bit channel.
//
// Text alternative: CSV with header "bin_index,channel".

namespace qlink {

enum class TagFileFormat { binary, csv, by_extension };

void write_tag_file(const TimeTagStream& stream, const std::string& path,
                    TagFileFormat format = TagFileFormat::by_extension);

TimeTagStream read_tag_file(const std::string& path);

// Streaming, rewindable reader (binary or CSV, auto-detected by content), so
// multi-gigabyte tag files never have to fit in memory at once.
class TagFileReader {
 public:
  explicit TagFileReader(const std::string& path);
  ~TagFileReader();
  TagFileReader(const TagFileReader&) = delete;
  TagFileReader& operator=(const TagFileReader&) = delete;

  std::uint64_t bin_width_fs() const { return bin_width_fs_; }
  std::uint32_t channel_count() const { return channel_count_; }

  // Appends up to max_records to the vectors; returns the count (0 at EOF).
  size_t read(std::vector<std::uint64_t>& bins, std::vector<std::uint8_t>& channels,
              size_t max_records);
  void reset();

 private:
  void* file_ = nullptr;
  bool csv_ = false;
  std::uint64_t bin_width_fs_ = 82300;
  std::uint32_t channel_count_ = 2;
  long data_start_ = 0;
  std::uint64_t lineno_ = 0;
  std::string path_;
};

// Streaming writer used by the simulation engine: tags are appended in
// sorted batches and the header is written up front.
class TagFileWriter {
 public:
  TagFileWriter(const std::string& path, std::uint64_t bin_width_fs,
                std::uint32_t channel_count, TagFileFormat format = TagFileFormat::by_extension);
  ~TagFileWriter();
  TagFileWriter(const TagFileWriter&) = delete;
  TagFileWriter& operator=(const TagFileWriter&) = delete;

  void append(const std::uint64_t* bins, const std::uint8_t* channels, size_t n);
  void append(const TimeTagStream& stream);
  void close();
  std::uint64_t written() const { return written_; }

 private:
  void* file_ = nullptr;
  bool csv_ = false;
  std::uint64_t written_ = 0;
  std::string path_;
};

}  // namespace qlink
