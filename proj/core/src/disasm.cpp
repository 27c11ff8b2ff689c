#include "ropdda/disasm.hpp"

#include "ropdda/error.hpp"

#include <mutex>
#include <stdexcept>
#include <string>

namespace ropdda::disasm {

namespace {

constexpr std::array<std::string_view, kOpcodeClassCount> kNames = {
    "RET",    "RET_IMM16", "POP_R", "PUSH_R", "MOV_R_IMM32", "ADD_ESP_IMM8",
    "XOR_RM_R", "ADD_RM_R", "MOV_R_RM", "INC_R", "DEC_R",     "NOP",
    "LEAVE",  "INT3",      "JMP_RM", "CALL_RM",
};

constexpr std::array<std::uint8_t, kOpcodeClassCount> kLengths = {
    1, 3, 1, 1, 5, 3, 2, 2, 2, 1, 1, 1, 1, 1, 2, 2,
};

std::string hex_byte(std::uint8_t b) {
    static constexpr char digits[] = "0123456789abcdef";
    return {'0', 'x', digits[b >> 4], digits[b & 0xF]};
}

std::uint8_t modrm_direct(std::uint8_t reg, std::uint8_t rm) {
    return static_cast<std::uint8_t>(0xC0 | (reg << 3) | rm);
}

} // namespace

std::string_view to_string(OpcodeClass op) { return kNames[static_cast<std::size_t>(op)]; }

std::optional<OpcodeClass> opcode_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (kNames[i] == name) return static_cast<OpcodeClass>(i);
    }
    return std::nullopt;
}

std::size_t encoded_length(OpcodeClass op) { return kLengths[static_cast<std::size_t>(op)]; }

bool is_indirect_branch(OpcodeClass op) {
    return op == OpcodeClass::Ret || op == OpcodeClass::RetImm16 || op == OpcodeClass::JmpRm ||
           op == OpcodeClass::CallRm;
}

bool is_opcode_byte(std::uint8_t b) {
    switch (b) {
    case 0xC3: case 0xC2: case 0x83: case 0x31: case 0x01: case 0x8B:
    case 0x90: case 0xC9: case 0xCC: case 0xFF:
        return true;
    default:
        return (b >= 0x40 && b <= 0x5F) || (b >= 0xB8 && b <= 0xBF);
    }
}

Instruction make_instruction(OpcodeClass op, std::uint8_t reg, std::uint8_t rm, std::uint32_t imm) {
    if (reg > 7 || rm > 7) throw std::invalid_argument("register index out of range");
    Instruction insn;
    insn.opcode = op;
    insn.length = kLengths[static_cast<std::size_t>(op)];
    auto &raw = insn.raw;
    auto require_zero = [&](bool ok) {
        if (!ok) throw std::invalid_argument(std::string("unused operand set for ") +
                                             std::string(to_string(op)));
    };
    switch (op) {
    case OpcodeClass::Ret:
    case OpcodeClass::Nop:
    case OpcodeClass::Leave:
    case OpcodeClass::Int3:
        require_zero(reg == 0 && rm == 0 && imm == 0);
        raw[0] = op == OpcodeClass::Ret ? 0xC3 : op == OpcodeClass::Nop ? 0x90
                 : op == OpcodeClass::Leave ? 0xC9 : 0xCC;
        break;
    case OpcodeClass::RetImm16:
        require_zero(reg == 0 && rm == 0);
        if (imm > 0xFFFF) throw std::invalid_argument("imm16 out of range");
        raw[0] = 0xC2;
        raw[1] = static_cast<std::uint8_t>(imm);
        raw[2] = static_cast<std::uint8_t>(imm >> 8);
        insn.imm = imm;
        break;
    case OpcodeClass::PopR:
    case OpcodeClass::PushR:
    case OpcodeClass::IncR:
    case OpcodeClass::DecR:
        require_zero(rm == 0 && imm == 0);
        raw[0] = static_cast<std::uint8_t>(
            (op == OpcodeClass::PopR ? 0x58 : op == OpcodeClass::PushR ? 0x50
             : op == OpcodeClass::IncR ? 0x40 : 0x48) + reg);
        insn.reg = reg;
        break;
    case OpcodeClass::MovRImm32:
        require_zero(rm == 0);
        raw[0] = static_cast<std::uint8_t>(0xB8 + reg);
        for (std::size_t i = 0; i < 4; ++i) raw[1 + i] = static_cast<std::uint8_t>(imm >> (8 * i));
        insn.reg = reg;
        insn.imm = imm;
        break;
    case OpcodeClass::AddEspImm8:
        require_zero(reg == 0 && rm == 0);
        if (imm > 0xFF) throw std::invalid_argument("imm8 out of range");
        raw[0] = 0x83;
        raw[1] = 0xC4;
        raw[2] = static_cast<std::uint8_t>(imm);
        insn.imm = imm;
        break;
    case OpcodeClass::XorRmR:
    case OpcodeClass::AddRmR:
    case OpcodeClass::MovRRm:
        require_zero(imm == 0);
        raw[0] = op == OpcodeClass::XorRmR ? 0x31 : op == OpcodeClass::AddRmR ? 0x01 : 0x8B;
        raw[1] = modrm_direct(reg, rm);
        insn.reg = reg;
        insn.rm = rm;
        break;
    case OpcodeClass::JmpRm:
    case OpcodeClass::CallRm:
        require_zero(reg == 0 && imm == 0);
        raw[0] = 0xFF;
        raw[1] = modrm_direct(op == OpcodeClass::JmpRm ? 4 : 2, rm);
        insn.rm = rm;
        break;
    }
    return insn;
}

Instruction decode_instruction(ByteView bytes, std::size_t offset) {
    if (offset >= bytes.size()) {
        throw TruncatedInstruction("offset " + std::to_string(offset) + " past end");
    }
    const std::uint8_t b0 = bytes[offset];
    const std::size_t remaining = bytes.size() - offset;

    auto need = [&](OpcodeClass op) {
        if (remaining < encoded_length(op)) {
            throw TruncatedInstruction(std::string(to_string(op)) + " at offset " +
                                       std::to_string(offset) + " needs " +
                                       std::to_string(encoded_length(op)) + " bytes");
        }
    };
    auto unknown = [&](std::size_t len) -> UnknownOpcode {
        std::string seq;
        for (std::size_t i = 0; i < len && i < remaining; ++i) {
            if (i) seq += ' ';
            seq += hex_byte(bytes[offset + i]);
        }
        return UnknownOpcode(seq + " at offset " + std::to_string(offset));
    };

    std::uint8_t reg = 0, rm = 0;
    std::uint32_t imm = 0;
    OpcodeClass op;

    if (b0 >= 0x40 && b0 <= 0x5F) {
        static constexpr OpcodeClass kRows[] = {OpcodeClass::IncR, OpcodeClass::DecR,
                                               OpcodeClass::PushR, OpcodeClass::PopR};
        op = kRows[(b0 - 0x40) >> 3];
        reg = b0 & 7;
    } else if (b0 >= 0xB8 && b0 <= 0xBF) {
        op = OpcodeClass::MovRImm32;
        need(op);
        reg = b0 & 7;
        imm = read_le32(bytes, offset + 1);
    } else {
        switch (b0) {
        case 0xC3: op = OpcodeClass::Ret; break;
        case 0x90: op = OpcodeClass::Nop; break;
        case 0xC9: op = OpcodeClass::Leave; break;
        case 0xCC: op = OpcodeClass::Int3; break;
        case 0xC2:
            op = OpcodeClass::RetImm16;
            need(op);
            imm = static_cast<std::uint32_t>(bytes[offset + 1]) |
                  (static_cast<std::uint32_t>(bytes[offset + 2]) << 8);
            break;
        case 0x83:
            if (remaining < 2) throw TruncatedInstruction("0x83 at offset " + std::to_string(offset));
            if (bytes[offset + 1] != 0xC4) throw unknown(2);
            op = OpcodeClass::AddEspImm8;
            need(op);
            imm = bytes[offset + 2];
            break;
        case 0x31:
        case 0x01:
        case 0x8B: {
            op = b0 == 0x31 ? OpcodeClass::XorRmR : b0 == 0x01 ? OpcodeClass::AddRmR
                                                                : OpcodeClass::MovRRm;
            need(op);
            const std::uint8_t modrm = bytes[offset + 1];
            if ((modrm & 0xC0) != 0xC0) throw unknown(2);
            reg = (modrm >> 3) & 7;
            rm = modrm & 7;
            break;
        }
        case 0xFF: {
            if (remaining < 2) throw TruncatedInstruction("0xff at offset " + std::to_string(offset));
            const std::uint8_t modrm = bytes[offset + 1];
            const std::uint8_t field = (modrm >> 3) & 7;
            if ((modrm & 0xC0) != 0xC0 || (field != 4 && field != 2)) throw unknown(2);
            op = field == 4 ? OpcodeClass::JmpRm : OpcodeClass::CallRm;
            rm = modrm & 7;
            break;
        }
        default:
            throw unknown(1);
        }
    }

    Instruction insn;
    insn.opcode = op;
    insn.reg = reg;
    insn.rm = rm;
    insn.imm = imm;
    insn.length = static_cast<std::uint8_t>(encoded_length(op));
    for (std::size_t i = 0; i < insn.length; ++i) insn.raw[i] = bytes[offset + i];
    return insn;
}

std::vector<Instruction> decode_all(ByteView bytes) {
    std::vector<Instruction> out;
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        out.push_back(decode_instruction(bytes, offset));
        offset += out.back().length;
    }
    return out;
}

Bytes Gadget::bytes() const {
    Bytes out;
    out.reserve(byte_len);
    for (const auto &insn : instructions) {
        auto b = insn.bytes();
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

ProgramImage::ProgramImage(std::uint32_t base_address, Bytes bytes)
    : base_(base_address), bytes_(std::move(bytes)), memo_(std::make_unique<Memo>()) {
    if (bytes_.size() < kMinImageSize || bytes_.size() > kMaxImageSize) {
        throw InvalidImage("image size " + std::to_string(bytes_.size()) +
                           " outside [1 KiB, 1 MiB]");
    }
    if (static_cast<std::uint64_t>(base_) + bytes_.size() > (std::uint64_t{1} << 32)) {
        throw InvalidImage("segment wraps the 32-bit address space");
    }
}

ProgramImage::ProgramImage(const ProgramImage &other)
    : base_(other.base_), bytes_(other.bytes_), memo_(std::make_unique<Memo>()) {}

ProgramImage &ProgramImage::operator=(const ProgramImage &other) {
    if (this != &other) {
        base_ = other.base_;
        bytes_ = other.bytes_;
        memo_ = std::make_unique<Memo>();
    }
    return *this;
}

bool ProgramImage::contains(std::uint32_t address) const {
    return address >= base_ && address - base_ < bytes_.size();
}

std::optional<Gadget> ProgramImage::decode_gadget(std::size_t offset) const {
    Gadget g;
    g.start_address = static_cast<std::uint32_t>(base_ + offset);
    std::size_t pos = offset;
    try {
        while (g.instructions.size() < kMaxGadgetInsns && pos < bytes_.size()) {
            Instruction insn = decode_instruction(bytes_, pos);
            pos += insn.length;
            g.byte_len += insn.length;
            const bool terminal = is_indirect_branch(insn.opcode);
            g.instructions.push_back(insn);
            if (terminal) return g;
        }
    } catch (const UnknownOpcode &) {
        return std::nullopt;
    } catch (const TruncatedInstruction &) {
        return std::nullopt;
    }
    return std::nullopt;
}

std::optional<Gadget> ProgramImage::gadget_at(std::uint32_t address) const {
    if (!contains(address)) return std::nullopt;
    {
        std::shared_lock lock(memo_->mutex);
        if (auto it = memo_->entries.find(address); it != memo_->entries.end()) return it->second;
    }
    auto result = decode_gadget(address - base_);
    std::unique_lock lock(memo_->mutex);
    memo_->entries.emplace(address, result);
    return result;
}

std::size_t ProgramImage::memo_size() const {
    std::shared_lock lock(memo_->mutex);
    return memo_->entries.size();
}

std::vector<ChainSample> scan_payload(ByteView payload, const ProgramImage &image) {
    std::vector<ChainSample> out;
    if (payload.size() < kAddressWidth) return out;
    const std::size_t last_word = payload.size() - kAddressWidth;

    std::size_t p = 0;
    while (p <= last_word) {
        auto first = image.gadget_at(read_le32(payload, p));
        if (!first) {
            ++p;
            continue;
        }
        ChainSample chain;
        chain.gadgets.push_back(std::move(*first));
        chain.source_offsets.push_back(p);

        std::size_t anchor = p;
        bool extended = true;
        while (extended) {
            extended = false;
            for (std::size_t k = 1; k <= kLookahead; ++k) {
                const std::size_t q = anchor + k * kAddressWidth;
                if (q > last_word) break;
                if (auto g = image.gadget_at(read_le32(payload, q))) {
                    chain.gadgets.push_back(std::move(*g));
                    chain.source_offsets.push_back(q);
                    anchor = q;
                    extended = true;
                    break;
                }
            }
        }

        if (chain.gadgets.size() >= kMinChainLen) {
            for (const auto &g : chain.gadgets) {
                auto b = g.bytes();
                chain.bytes.insert(chain.bytes.end(), b.begin(), b.end());
            }
            out.push_back(std::move(chain));
            p = anchor + kAddressWidth;
        } else {
            ++p;
        }
    }
    return out;
}

} // namespace ropdda::disasm
