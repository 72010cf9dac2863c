#include <gtest/gtest.h>

#include <cstring>

#include <sstream>

#include "streamrak/dataset_io.hpp"

using namespace streamrak;

namespace {

VectorDataset small(std::uint64_t seed) {
    Rng rng(seed);
    VectorDataset d{PointBlock(5, 3), RowMatrix(5, 2)};
    for (Eigen::Index i = 0; i < d.points.size(); ++i) d.points.data()[i] = uniform01(rng) * 1e3 - 5e2;
    for (Eigen::Index i = 0; i < d.targets.size(); ++i) d.targets.data()[i] = std::sin(uniform01(rng) * 7);
    d.points(0, 0) = 1e-300;
    return d;
}

}  // namespace

TEST(Csv, HeaderNamesInputsThenOutputs) {
    EXPECT_EQ(csv_header(2, 1), "x1,x2,y1");
    EXPECT_EQ(csv_header(1, 0), "x1");
}

TEST(Csv, RoundTripIsBitExact) {
    const VectorDataset d = small(1);
    std::stringstream ss;
    write_csv(ss, d);
    const VectorDataset back = read_dataset(ss);
    EXPECT_EQ(back.points, d.points);
    EXPECT_EQ(back.targets, d.targets);
}

TEST(Smrd, RoundTripIsBitExact) {
    const VectorDataset d = small(2);
    std::stringstream ss;
    write_smrd(ss, d);
    EXPECT_EQ(ss.str().substr(0, 4), "SMRD");
    EXPECT_EQ(ss.str().size(), 4u + 4 + 4 + 4 + 8 + 5 * 5 * 8);
    const VectorDataset back = read_dataset(ss);
    EXPECT_EQ(back.points, d.points);
    EXPECT_EQ(back.targets, d.targets);
}

TEST(Smrd, UnboundedRowCountReadsToEnd) {
    const VectorDataset d = small(3);
    std::stringstream ss;
    write_smrd(ss, d);
    std::string bytes = ss.str();
    const std::uint64_t unbounded = kUnboundedRows;
    std::memcpy(bytes.data() + 16, &unbounded, 8);
    std::stringstream in(bytes);
    EXPECT_EQ(read_dataset(in).points, d.points);
}

TEST(Reader, InputsOnlyCsvHasNoOutputs) {
    std::stringstream ss("x1,x2\n1,2\n3,4\n");
    SampleReader r(ss);
    EXPECT_EQ(r.dim(), 2u);
    EXPECT_EQ(r.outputs(), 0u);
    std::vector<double> row;
    ASSERT_TRUE(r.next(row));
    EXPECT_EQ(row, (std::vector<double>{1, 2}));
}

TEST(Reader, ToleratesCrlfBlankLinesAndSpaces) {
    std::stringstream ss("x1, y1\r\n 0.5 , 1\r\n\r\n2,3\r\n");
    const VectorDataset d = read_dataset(ss);
    ASSERT_EQ(d.size(), 2);
    EXPECT_EQ(d.points(0, 0), 0.5);
    EXPECT_EQ(d.targets(1, 0), 3.0);
}

TEST(Reader, ErrorsCarryLocation) {
    std::stringstream empty;
    EXPECT_THROW(SampleReader{empty}, FormatError);
    std::stringstream header("a,b\n1,2\n");
    EXPECT_THROW(SampleReader{header}, FormatError);
    std::stringstream order("x2,y1\n1,2\n");
    EXPECT_THROW(SampleReader{order}, FormatError);
    std::stringstream cell("x1,y1\n1,2\n3,abc\n");
    try {
        read_dataset(cell);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
    std::stringstream width("x1,y1\n1,2,3\n");
    EXPECT_THROW(read_dataset(width), FormatError);
    std::stringstream ss;
    write_smrd(ss, small(4));
    std::stringstream truncated(ss.str().substr(0, ss.str().size() - 3));
    try {
        read_dataset(truncated);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
}

TEST(Files, ExtensionSelectsFormat) {
    const VectorDataset d = small(5);
    const std::string dir = ::testing::TempDir();
    write_dataset_file(dir + "io_test.smrd", d);
    write_dataset_file(dir + "io_test.csv", d);
    EXPECT_EQ(read_dataset_file(dir + "io_test.smrd").points, d.points);
    EXPECT_EQ(read_dataset_file(dir + "io_test.csv").targets, d.targets);
    EXPECT_THROW(read_dataset_file(dir + "missing.csv"), FormatError);
}

TEST(Files, BatchDatasetConversion) {
    BatchDataset b{PointBlock::Ones(3, 2), Vector::LinSpaced(3, 0, 2)};
    const VectorDataset v = to_vector_dataset(b);
    EXPECT_EQ(v.targets.cols(), 1);
    EXPECT_EQ(v.targets(2, 0), 2.0);
}
