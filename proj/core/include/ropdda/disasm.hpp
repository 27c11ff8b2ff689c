#pragma once

// Decoder for a fixed x86-32 instruction subset, gadget validation against a
// program image, and address-space-layout guided scanning of payload bytes.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ropdda::disasm {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline constexpr std::size_t kMaxGadgetInsns = 10;
inline constexpr std::size_t kMinChainLen = 2;
inline constexpr std::size_t kLookahead = 10;
inline constexpr std::size_t kAddressWidth = 4;
inline constexpr std::size_t kMinImageSize = 1024;
inline constexpr std::size_t kMaxImageSize = 1024 * 1024;

enum class OpcodeClass : std::uint8_t {
    Ret,        // C3
    RetImm16,   // C2 iw
    PopR,       // 58+r
    PushR,      // 50+r
    MovRImm32,  // B8+r id
    AddEspImm8, // 83 C4 ib
    XorRmR,     // 31 /r, mod=11
    AddRmR,     // 01 /r, mod=11
    MovRRm,     // 8B /r, mod=11
    IncR,       // 40+r
    DecR,       // 48+r
    Nop,        // 90
    Leave,      // C9
    Int3,       // CC
    JmpRm,      // FF /4, mod=11
    CallRm,     // FF /2, mod=11
};

inline constexpr std::size_t kOpcodeClassCount = 16;

std::string_view to_string(OpcodeClass op);
std::optional<OpcodeClass> opcode_from_string(std::string_view name);

/// Encoded length in bytes; fixed per class.
std::size_t encoded_length(OpcodeClass op);

/// RET, RET imm16, JMP r/m and CALL r/m terminate a gadget.
bool is_indirect_branch(OpcodeClass op);

/// True if some instruction of the subset starts with this byte.
bool is_opcode_byte(std::uint8_t b);

struct Instruction {
    OpcodeClass opcode = OpcodeClass::Nop;
    std::uint8_t reg = 0;   ///< +r register or ModRM reg field
    std::uint8_t rm = 0;    ///< ModRM rm field (register-direct forms)
    std::uint32_t imm = 0;  ///< imm8 / imm16 / imm32, zero-extended
    std::uint8_t length = 1;
    std::array<std::uint8_t, 5> raw{};

    ByteView bytes() const { return {raw.data(), length}; }
    bool operator==(const Instruction &) const = default;
};

/// Builds and encodes an instruction. Operands the class does not use must be
/// zero; out-of-range registers or immediates raise std::invalid_argument.
Instruction make_instruction(OpcodeClass op, std::uint8_t reg = 0, std::uint8_t rm = 0,
                             std::uint32_t imm = 0);

/// Decodes the instruction at `offset`.
/// Throws UnknownOpcode or TruncatedInstruction.
Instruction decode_instruction(ByteView bytes, std::size_t offset);

/// Linear decode of a whole byte string. Throws on the first bad instruction.
std::vector<Instruction> decode_all(ByteView bytes);

struct Gadget {
    std::uint32_t start_address = 0;
    std::vector<Instruction> instructions;
    std::size_t byte_len = 0;

    Bytes bytes() const;
    bool operator==(const Gadget &) const = default;
};

/// An executable segment: immutable bytes loaded at a base address, with a
/// lazily filled, internally synchronized memo of gadget lookups.
class ProgramImage {
public:
    /// Throws InvalidImage when the size is outside [1 KiB, 1 MiB] or the
    /// segment would wrap the 32-bit address space.
    ProgramImage(std::uint32_t base_address, Bytes bytes);

    ProgramImage(const ProgramImage &other);
    ProgramImage &operator=(const ProgramImage &other);
    ProgramImage(ProgramImage &&) noexcept = default;
    ProgramImage &operator=(ProgramImage &&) noexcept = default;
    ~ProgramImage() = default;

    std::uint32_t base_address() const { return base_; }
    std::size_t size() const { return bytes_.size(); }
    const Bytes &bytes() const { return bytes_; }
    bool contains(std::uint32_t address) const;

    /// Gadget starting at `address`, or nullopt when the address is outside
    /// the segment, a decode fails, the image ends first, or no indirect
    /// branch appears within kMaxGadgetInsns instructions.
    std::optional<Gadget> gadget_at(std::uint32_t address) const;

    /// Number of memoized lookups (positive and negative).
    std::size_t memo_size() const;

private:
    struct Memo {
        mutable std::shared_mutex mutex;
        std::unordered_map<std::uint32_t, std::optional<Gadget>> entries;
    };

    std::optional<Gadget> decode_gadget(std::size_t offset) const;

    std::uint32_t base_ = 0;
    Bytes bytes_;
    std::unique_ptr<Memo> memo_;
};

struct ChainSample {
    std::vector<Gadget> gadgets;
    Bytes bytes;
    std::vector<std::size_t> source_offsets;

    bool operator==(const ChainSample &) const = default;
};

inline std::uint32_t read_le32(ByteView bytes, std::size_t offset) {
    return static_cast<std::uint32_t>(bytes[offset]) |
           (static_cast<std::uint32_t>(bytes[offset + 1]) << 8) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 3]) << 24);
}

inline void write_le32(std::span<std::uint8_t> bytes, std::size_t offset, std::uint32_t v) {
    for (std::size_t i = 0; i < 4; ++i) {
        bytes[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
}

/// ASL-guided disassembly of a payload.
///
/// Every byte position is tried as the start of a little-endian address. When
/// one names a gadget, the kLookahead aligned words following the most recently
/// confirmed address are examined; a hit extends the chain and restarts the
/// window, misses are skipped. The chain closes once a full window passes
/// without a hit. Chains of at least kMinChainLen gadgets are emitted and
/// scanning resumes right after the last consumed word; otherwise scanning
/// advances by one byte.
std::vector<ChainSample> scan_payload(ByteView payload, const ProgramImage &image);

} // namespace ropdda::disasm
