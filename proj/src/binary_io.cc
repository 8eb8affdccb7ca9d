// Copyright 2026 The divemb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "divemb/binary_io.h"

#include <array>
#include <bit>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>

#include "divemb/error.h"

namespace divemb::binary {

void WriteU32(std::ostream& out, uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 4);
}

void WriteF32(std::ostream& out, float v) {
  WriteU32(out, std::bit_cast<uint32_t>(v));
}

void WriteMagic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

void WriteString(std::ostream& out, std::string_view s) {
  WriteU32(out, CheckedU32(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t ReadU32(std::istream& in) {
  std::array<unsigned char, 4> b;
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw IoError("unexpected end of stream");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

float ReadF32(std::istream& in) { return std::bit_cast<float>(ReadU32(in)); }

void ExpectMagic(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic) {
    throw IoError("bad magic: expected '" + std::string(magic) + "'");
  }
}

std::string ReadString(std::istream& in) {
  uint32_t n = ReadU32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("truncated string");
  return s;
}

uint32_t CheckedU32(size_t v) {
  if (v > std::numeric_limits<uint32_t>::max()) {
    throw IoError("size does not fit in u32");
  }
  return static_cast<uint32_t>(v);
}

std::string Fnv1aHex(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace divemb::binary
