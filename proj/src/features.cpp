#include "spdnet/features.hpp"

#include "spdnet/errors.hpp"

#include <cmath>
#include <fstream>
#include <string>

namespace spdnet {

std::vector<std::uint8_t> render_pgm(const Matrix& m) {
  if (m.size() == 0) throw PreconditionError("render_pgm: empty matrix");
  require_finite(m, "render_pgm");
  const std::string header = "P5\n" + std::to_string(m.cols()) + " " +
                             std::to_string(m.rows()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const double peak = m.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = peak > 0.0 ? std::abs(m(i, j)) / peak * 255.0 : 0.0;
      out.push_back(static_cast<std::uint8_t>(std::lround(v)));
    }
  }
  return out;
}

void write_pgm(const std::string& path, const Matrix& m) {
  const auto bytes = render_pgm(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

double diagonal_energy(const Matrix& m) {
  const double total = m.squaredNorm();
  if (total == 0.0) return 0.0;
  return m.diagonal().squaredNorm() / total;
}

}  // namespace spdnet
