#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "rntk/errors.hpp"

namespace rntk {

enum class Activation : std::uint8_t { ReLU };

/// Initialization scales and depth of the infinite-width RNN.
struct HyperParams {
    double sigma_w = std::sqrt(2.0);
    double sigma_u = 1.0;
    double sigma_b = 0.0;
    double sigma_v = 1.0;
    int depth = 1;
    Activation activation = Activation::ReLU;

    void validate() const {
        auto finite = [](double v) { return std::isfinite(v); };
        if (!finite(sigma_w) || !finite(sigma_u) || !finite(sigma_b) || !finite(sigma_v)) {
            throw InvalidInput("hyperparameters must be finite");
        }
        if (sigma_w <= 0.0 || sigma_u <= 0.0 || sigma_v <= 0.0) {
            throw InvalidInput("sigma_w, sigma_u and sigma_v must be positive");
        }
        if (sigma_b < 0.0) {
            throw InvalidInput("sigma_b must be nonnegative");
        }
        if (depth < 1) {
            throw InvalidInput("depth must be at least 1");
        }
    }

    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

enum class Architecture : std::uint8_t { RNN = 0, BiRNN = 1, RNNAvg = 2, BiRNNAvg = 3 };

enum class InputOrder : std::uint8_t { Default = 0, Flipped = 1 };

/// Architecture plus the order in which input coordinates are fed.
///
/// Bidirectional architectures see both orders internally, so their
/// `order` is normalized to Default on construction through `make_variant`.
struct Variant {
    Architecture arch = Architecture::RNN;
    InputOrder order = InputOrder::Default;

    [[nodiscard]] constexpr bool bidirectional() const {
        return arch == Architecture::BiRNN || arch == Architecture::BiRNNAvg;
    }
    [[nodiscard]] constexpr bool pooled() const {
        return arch == Architecture::RNNAvg || arch == Architecture::BiRNNAvg;
    }
    [[nodiscard]] constexpr bool flipped() const {
        return !bidirectional() && order == InputOrder::Flipped;
    }

    /// One-byte code used by the Gram file header: bits 0-1 architecture, bit 4 flipped.
    [[nodiscard]] constexpr std::uint8_t code() const {
        return static_cast<std::uint8_t>(static_cast<std::uint8_t>(arch) | (flipped() ? 0x10u : 0u));
    }

    friend constexpr bool operator==(const Variant& a, const Variant& b) {
        return a.arch == b.arch && a.flipped() == b.flipped();
    }
};

constexpr Variant make_variant(Architecture arch, InputOrder order = InputOrder::Default) {
    Variant v{arch, order};
    if (v.bidirectional()) v.order = InputOrder::Default;
    return v;
}

/// The unidirectional architecture a bidirectional one is composed from.
constexpr Architecture base_architecture(Architecture arch) {
    switch (arch) {
        case Architecture::BiRNN: return Architecture::RNN;
        case Architecture::BiRNNAvg: return Architecture::RNNAvg;
        default: return arch;
    }
}

inline std::string to_string(Architecture arch) {
    switch (arch) {
        case Architecture::RNN: return "rnn";
        case Architecture::BiRNN: return "bi-rnn";
        case Architecture::RNNAvg: return "rnn-avg";
        case Architecture::BiRNNAvg: return "bi-rnn-avg";
    }
    return "?";
}

inline std::string to_string(const Variant& v) {
    return v.flipped() ? to_string(v.arch) + ":flipped" : to_string(v.arch);
}

inline std::optional<Architecture> parse_architecture(std::string_view name) {
    if (name == "rnn") return Architecture::RNN;
    if (name == "bi-rnn") return Architecture::BiRNN;
    if (name == "rnn-avg") return Architecture::RNNAvg;
    if (name == "bi-rnn-avg") return Architecture::BiRNNAvg;
    return std::nullopt;
}

inline std::optional<Variant> variant_from_code(std::uint8_t code) {
    const auto arch = static_cast<std::uint8_t>(code & 0x0fu);
    if (arch > 3 || (code & ~0x1fu) != 0) return std::nullopt;
    const auto order = (code & 0x10u) ? InputOrder::Flipped : InputOrder::Default;
    Variant v = make_variant(static_cast<Architecture>(arch), order);
    if (v.code() != code) return std::nullopt;
    return v;
}

}  // namespace rntk
