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

#ifndef DIVEMB_BINARY_IO_H_
#define DIVEMB_BINARY_IO_H_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

namespace divemb::binary {

// Little-endian primitives shared by every on-disk format.
void WriteU32(std::ostream& out, uint32_t v);
void WriteF32(std::ostream& out, float v);
void WriteMagic(std::ostream& out, std::string_view magic);
void WriteString(std::ostream& out, std::string_view s);

uint32_t ReadU32(std::istream& in);
float ReadF32(std::istream& in);
// Throws IoError when the next four bytes differ from `magic`.
void ExpectMagic(std::istream& in, std::string_view magic);
std::string ReadString(std::istream& in);

// Narrowing with range check; file formats store sizes as u32.
uint32_t CheckedU32(size_t v);

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string Fnv1aHex(std::string_view bytes);

}  // namespace divemb::binary

#endif  // DIVEMB_BINARY_IO_H_
