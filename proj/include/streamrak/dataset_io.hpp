#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "streamrak/bench.hpp"
#include "streamrak/binary_io.hpp"
#include "streamrak/common.hpp"

namespace streamrak {

// SMRD: "SMRD", version u32, D u32, K u32, row count u64, then rows of D + K f64.
// A row count of UINT64_MAX means "until end of stream".
inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr std::uint64_t kUnboundedRows = std::numeric_limits<std::uint64_t>::max();

inline std::string csv_header(std::size_t d, std::size_t k) {
    std::string h;
    for (std::size_t i = 1; i <= d; ++i) h += (i > 1 ? ",x" : "x") + std::to_string(i);
    for (std::size_t i = 1; i <= k; ++i) h += ",y" + std::to_string(i);
    return h;
}

inline void write_csv(std::ostream& os, const VectorDataset& d) {
    const auto dim = static_cast<std::size_t>(d.points.cols());
    const auto k = static_cast<std::size_t>(d.targets.cols());
    os << csv_header(dim, k) << '\n';
    os << std::setprecision(17);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        for (Eigen::Index c = 0; c < d.points.cols(); ++c) os << (c ? "," : "") << d.points(i, c);
        for (Eigen::Index c = 0; c < d.targets.cols(); ++c) os << ',' << d.targets(i, c);
        os << '\n';
    }
    if (!os) throw FormatError("write failed");
}

inline void write_smrd(std::ostream& os, const VectorDataset& d) {
    io::Writer w(os);
    w.magic("SMRD");
    w.put<std::uint32_t>(kDatasetFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.points.cols()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.targets.cols()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(d.size()));
    std::vector<double> row(static_cast<std::size_t>(d.points.cols() + d.targets.cols()));
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        std::size_t j = 0;
        for (Eigen::Index c = 0; c < d.points.cols(); ++c) row[j++] = d.points(i, c);
        for (Eigen::Index c = 0; c < d.targets.cols(); ++c) row[j++] = d.targets(i, c);
        w.doubles(row.data(), row.size());
    }
}

inline VectorDataset to_vector_dataset(const BatchDataset& b) {
    VectorDataset d{b.points, RowMatrix(b.size(), 1)};
    d.targets.col(0) = b.targets;
    return d;
}

/// Row-at-a-time reader over CSV or SMRD input; the format is detected from the first bytes.
class SampleReader {
public:
    explicit SampleReader(std::istream& in) : in_(in), bin_(in) {
        const int c0 = in_.peek();
        if (c0 == std::char_traits<char>::eof()) throw FormatError("no samples: input is empty");
        if (c0 == 'S') {
            bin_.expect_magic("SMRD");
            binary_ = true;
            read_binary_header();
            return;
        }
        read_csv_header();
    }

    std::size_t dim() const noexcept { return d_; }
    std::size_t outputs() const noexcept { return k_; }
    bool binary() const noexcept { return binary_; }
    std::uint64_t rows_read() const noexcept { return rows_; }

    /// Fills `row` with D + K values; false at end of input.
    bool next(std::vector<double>& row) {
        row.resize(d_ + k_);
        return binary_ ? next_binary(row) : next_csv(row);
    }

private:
    void read_binary_header() {
        const auto version = bin_.get<std::uint32_t>();
        if (version != kDatasetFormatVersion) bin_.fail("unsupported dataset version " + std::to_string(version), 4);
        d_ = bin_.get<std::uint32_t>();
        k_ = bin_.get<std::uint32_t>();
        declared_ = bin_.get<std::uint64_t>();
        if (d_ == 0) bin_.fail("dataset declares zero input dimensions", 8);
    }

    bool next_binary(std::vector<double>& row) {
        if (declared_ != kUnboundedRows && rows_ >= declared_) return false;
        if (declared_ == kUnboundedRows && bin_.at_end()) return false;
        bin_.doubles(row.data(), row.size());
        ++rows_;
        return true;
    }

    void read_csv_header() {
        std::string line;
        if (!std::getline(in_, line)) throw FormatError("no samples: input is empty");
        ++line_;
        strip(line);
        std::stringstream ss(line);
        std::string name;
        bool in_y = false;
        while (std::getline(ss, name, ',')) {
            strip(name);
            if (name.size() >= 2 && name[0] == 'x' && !in_y) {
                ++d_;
                if (name != "x" + std::to_string(d_)) bad_header(line);
            } else if (name.size() >= 2 && name[0] == 'y') {
                in_y = true;
                ++k_;
                if (name != "y" + std::to_string(k_)) bad_header(line);
            } else {
                bad_header(line);
            }
        }
        if (d_ == 0) bad_header(line);
    }

    [[noreturn]] void bad_header(const std::string& line) const {
        throw FormatError("CSV header must be x1,...,xD[,y1,...,yK], got `" + line + "`");
    }

    bool next_csv(std::vector<double>& row) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_;
            strip(line);
            if (line.empty()) continue;
            std::size_t pos = 0, j = 0;
            bool rest = true;
            while (j < row.size()) {
                const std::size_t end = std::min(line.find(',', pos), line.size());
                std::string cell = line.substr(pos, end - pos);
                strip(cell);
                const char* b = cell.data();
                const auto [p, ec] = std::from_chars(b, b + cell.size(), row[j]);
                if (ec != std::errc() || p != b + cell.size()) {
                    throw FormatError("line " + std::to_string(line_) + ", column " + std::to_string(j + 1) +
                                      ": cannot parse `" + cell + "`");
                }
                ++j;
                if (end == line.size()) {
                    rest = false;
                    break;
                }
                pos = end + 1;
            }
            if (j != row.size() || rest) {
                throw FormatError("line " + std::to_string(line_) + ": expected " + std::to_string(row.size()) +
                                  " values");
            }
            ++rows_;
            return true;
        }
        return false;
    }

    static void strip(std::string& s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
        std::size_t b = 0;
        while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
        s.erase(0, b);
    }

    std::istream& in_;
    io::Reader bin_;
    bool binary_ = false;
    std::size_t d_ = 0, k_ = 0;
    std::uint64_t declared_ = 0, rows_ = 0, line_ = 0;
};

inline VectorDataset read_dataset(std::istream& in) {
    SampleReader r(in);
    std::vector<double> xs, ys, row;
    while (r.next(row)) {
        xs.insert(xs.end(), row.begin(), row.begin() + static_cast<std::ptrdiff_t>(r.dim()));
        ys.insert(ys.end(), row.begin() + static_cast<std::ptrdiff_t>(r.dim()), row.end());
    }
    const auto n = static_cast<Eigen::Index>(r.rows_read());
    VectorDataset d{PointBlock(n, static_cast<Eigen::Index>(r.dim())),
                    RowMatrix(n, static_cast<Eigen::Index>(r.outputs()))};
    if (!xs.empty()) std::copy(xs.begin(), xs.end(), d.points.data());
    if (!ys.empty()) std::copy(ys.begin(), ys.end(), d.targets.data());
    return d;
}

inline VectorDataset read_dataset_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    try {
        return read_dataset(in);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Binary when the path ends in .smrd, CSV otherwise.
inline void write_dataset_file(const std::string& path, const VectorDataset& d) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot create " + path);
    if (ends_with(path, ".smrd")) {
        write_smrd(out, d);
    } else {
        write_csv(out, d);
    }
    out.flush();
    if (!out) throw FormatError("write failed: " + path);
}

}  // namespace streamrak
