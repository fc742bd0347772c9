#ifndef LMMREG_IO_HPP
#define LMMREG_IO_HPP

#include <optional>
#include <string>

#include "lmmreg/bench.hpp"
#include "lmmreg/em.hpp"

namespace lmmreg {

enum class CloudFormat { PlyAscii, PlyBinary, Xyz };

/// Reads ASCII or binary-little-endian PLY (element vertex with
/// float/double x, y, z; extra properties skipped) or whitespace XYZ text
/// with '#' comments. Dispatch is by the "ply" magic. Point order is
/// preserved.
PointCloud read_cloud(const std::string& path);

/// ASCII formats use 17-significant-digit decimals so doubles round-trip;
/// binary PLY stores little-endian doubles.
void write_cloud(const PointCloud& cloud, const std::string& path,
                 CloudFormat format);

/// Ground-truth file: JSON array of {rotation: [9 row-major],
/// translation: [3]}.
GroundTruth load_ground_truth(const std::string& path);
void save_ground_truth(const GroundTruth& gt, const std::string& path);

struct ResultRecord {
    std::vector<RigidTransform> transforms;
    double scale_b = 0.0;
    int iterations = 0;
    bool converged = false;
    std::optional<double> e_R;
    std::optional<double> e_t;
    double wall_time_s = 0.0;
    std::string solver;
};

void save_result(const ResultRecord& rec, const std::string& path);
ResultRecord load_result(const std::string& path);

/// One RFC-4180 CSV field (quotes only when needed, '.' decimal point).
std::string csv_field(const std::string& s);
std::string format_double(double v);  // %.17g

}  // namespace lmmreg

#endif
