#include <gtest/gtest.h>

#include <random>

#include "planartrap/fields.hpp"
#include "planartrap/layout.hpp"

using namespace planartrap;

namespace {

// Regular n-gon with the same area as the disc of radius r.
Polygon equal_area_ngon(double r, int n) {
  const double theta = constants::two_pi / n;
  return regular_polygon(Vec2::Zero(), r * std::sqrt(theta / std::sin(theta)), n);
}

double disc_on_axis(double z, double r) { return 1.0 - z / std::sqrt(z * z + r * r); }
double disc_on_axis_dz(double z, double r) { return -r * r / std::pow(z * z + r * r, 1.5); }

ArrayLayout single(const Polygon& poly, std::optional<double> plane = std::nullopt) {
  ArrayLayout l;
  l.electrodes = {{"e", poly, "e"}};
  l.rf_channels = {"e"};
  l.ground_plane_height = plane;
  return l;
}

DriveState uniform_drive(const ArrayLayout& l, double amplitude) {
  DriveState d;
  d.rf_frequency_hz = 10e6;
  for (const auto& ch : l.channels()) d.channels[ch].amplitude_v = amplitude;
  return d;
}

}  // namespace

TEST(Fields, DiscOnAxisMatchesClosedForm) {
  const double r = 1e-3;
  const Electrode disc{"disc", equal_area_ngon(r, 256), "disc"};
  for (int i = 0; i <= 100; ++i) {
    const double z = r * 0.1 * std::pow(100.0, i / 100.0);
    const double exact = disc_on_axis(z, r);
    EXPECT_NEAR(basis_potential(disc, {0, 0, z}) / exact, 1.0, 1e-4) << "z/R = " << z / r;
  }
}

TEST(Fields, DiscOnAxisDerivativeMatchesClosedForm) {
  const double r = 1e-3;
  const Electrode disc{"disc", equal_area_ngon(r, 256), "disc"};
  for (double zr : {0.1, 0.5, 1.0, 3.0, 10.0}) {
    const double z = zr * r;
    const Vec3 g = basis_gradient(disc, {0, 0, z});
    EXPECT_NEAR(g.z() / disc_on_axis_dz(z, r), 1.0, 1e-3) << zr;
    EXPECT_LT(std::hypot(g.x(), g.y()), 1e-9 * std::abs(g.z()));
  }
}

TEST(Fields, FarFieldDecaysMonotonically) {
  const Electrode disc{"disc", equal_area_ngon(1e-3, 64), "disc"};
  double prev = 1.0;
  for (double z = 1e-4; z < 0.3; z *= 1.5) {
    const double v = basis_potential(disc, {0, 0, z});
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(basis_potential(disc, {0, 0, 100 * 2e-3}), 1e-3);
}

TEST(Fields, LargeTiledSquareSubtendsFullPlane) {
  double sum = 0.0;
  const Vec3 p(1e-5, -2e-5, 1e-4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const Electrode e{"q", rectangle(i ? 0.0 : -1.0, i ? 1.0 : 0.0, j ? 0.0 : -1.0, j ? 1.0 : 0.0), "q"};
      const double v = basis_potential(e, p);
      EXPECT_GT(v, 0.0);
      sum += v;
    }
  EXPECT_NEAR(sum, 1.0, 1e-3);
}

TEST(Fields, GradientMatchesFiniteDifferences) {
  const ArrayLayout l = make_folsom();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(-3e-3, 3e-3), uz(30e-6, 2e-3);
  std::uniform_int_distribution<std::size_t> pick(0, l.electrodes.size() - 1);
  for (int i = 0; i < 200; ++i) {
    const Electrode& e = l.electrodes[pick(rng)];
    const Vec3 p(ux(rng), ux(rng), uz(rng));
    const Vec3 g = basis_gradient(e, p);
    Vec3 fd;
    const double h = 1e-7 * p.z();
    for (int k = 0; k < 3; ++k) {
      Vec3 a = p, b = p;
      a[k] += h;
      b[k] -= h;
      fd[k] = (basis_potential(e, a) - basis_potential(e, b)) / (2 * h);
    }
    EXPECT_LT((fd - g).norm(), 1e-5 * g.norm()) << e.id << " at " << p.transpose();
  }
}

TEST(Fields, HessianIsTracelessAtRandomPoints) {
  const ArrayLayout l = make_folsom();
  const FieldModel m(l);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> ux(-3e-3, 3e-3), uz(30e-6, 2e-3);
  std::uniform_int_distribution<std::size_t> pick(0, m.channels().size() - 1);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(ux(rng), ux(rng), uz(rng));
    const Mat3 h = m.channel_hessian(pick(rng), p);
    ASSERT_LT(std::abs(h.trace()), 1e-5 * h.norm()) << p.transpose();
    ASSERT_LT((h - h.transpose()).norm(), 1e-6 * h.norm());
  }
}

TEST(Fields, MirrorSymmetricPointsGiveMirroredGradients) {
  const Electrode e{"r", rectangle(-2e-4, 2e-4, -1e-4, 3e-4), "r"};
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ux(0.0, 5e-4), uz(2e-5, 5e-4);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(ux(rng), ux(rng) - 2e-4, uz(rng));
    const Vec3 q(-p.x(), p.y(), p.z());
    const Vec3 gp = basis_gradient(e, p), gq = basis_gradient(e, q);
    EXPECT_NEAR(gp.x(), -gq.x(), 1e-9 * gp.norm());
    EXPECT_NEAR(gp.y(), gq.y(), 1e-9 * gp.norm());
    EXPECT_NEAR(gp.z(), gq.z(), 1e-9 * gp.norm());
    EXPECT_NEAR(basis_potential(e, p), basis_potential(e, q), 1e-12);
  }
}

TEST(Fields, PointsOnOrBelowThePlaneAreRejected) {
  const Electrode e{"r", rectangle(0, 1e-3, 0, 1e-3), "r"};
  EXPECT_THROW(basis_potential(e, {0, 0, 0}), ConfigError);
  EXPECT_THROW(basis_gradient(e, {0, 0, -1e-6}), ConfigError);
}

TEST(Fields, EquipotentialTiledPlaneHasNoField) {
  // Nine tiles cover a square much larger than any evaluation height.
  const double inner = 1e-3, outer = 1e12;
  const double edges[4] = {-outer, -inner, inner, outer};
  ArrayLayout l;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const std::string id = "t" + std::to_string(i) + std::to_string(j);
      l.electrodes.push_back({id, rectangle(edges[i], edges[i + 1], edges[j], edges[j + 1]), id});
      l.rf_channels.push_back(id);
    }
  const double a = 100.0;
  const FieldModel m(l);
  const DriveWeights w = m.weights(uniform_drive(l, a));
  for (const Vec3& p : {Vec3(0, 0, 1e-4), Vec3(5e-4, -9e-4, 4e-4), Vec3(2e-3, 1e-3, 1e-3)})
    EXPECT_LT(m.rf_field(w, p).norm(), 1e-9 * a) << p.transpose();
}

TEST(Fields, FieldIsLinearInAmplitude) {
  const ArrayLayout l = make_folsom();
  const FieldModel m(l);
  const DriveState d = home_drive(l, 100.0, 10.1e6).with_offset_db(channel_ids::y_adj, -3.0);
  const DriveWeights w1 = m.weights(d), w2 = m.weights(d.with_amplitude_scale(2.0));
  for (const Vec3& p : {Vec3(0.75e-3, 0.7e-3, 4e-4), Vec3(-1e-3, 2e-3, 1e-4)}) {
    const FieldSample s1 = m.sample(w1, p), s2 = m.sample(w2, p);
    EXPECT_EQ(s2.e_rf.norm(), 2.0 * s1.e_rf.norm());
    EXPECT_EQ(s2.e_rf_norm2(), 4.0 * s1.e_rf_norm2());
    EXPECT_LT((s2.hess_e2 - 4.0 * s1.hess_e2).norm(), 1e-12 * s1.hess_e2.norm());
  }
}

TEST(Fields, ChannelsSuperpose) {
  const ArrayLayout l = make_folsom();
  const FieldModel m(l);
  DriveState d = home_drive(l, 0.0, 10.1e6);
  d.channel(channel_ids::rf_main).amplitude_v = 30.0;
  d.channel(channel_ids::x_adj).amplitude_v = 70.0;
  d.channel(channel_ids::x_adj).phase_rad = 0.3;
  const Vec3 p(0.6e-3, 0.9e-3, 3e-4);
  const CVec3 e = m.rf_field(m.weights(d), p);
  const CVec3 expected = -30.0 * m.channel_gradient(m.index_of(channel_ids::rf_main), p).cast<Complex>() -
                         std::polar(70.0, 0.3) * m.channel_gradient(m.index_of(channel_ids::x_adj), p).cast<Complex>();
  EXPECT_LT((e - expected).norm(), 1e-12 * expected.norm());
}

TEST(Fields, PiPhaseEqualsNegatedAmplitude) {
  const ArrayLayout l = make_folsom();
  const FieldModel m(l);
  const DriveState d = home_drive(l, 100.0, 10.1e6);
  const Vec3 p(0.7e-3, 0.8e-3, 4.5e-4);
  const CVec3 e_pi = m.rf_field(m.weights(d.with_phase(channel_ids::x_adj, constants::pi)), p);
  const CVec3 e0 = m.rf_field(m.weights(d.with_offset_db(channel_ids::x_adj, -400.0)), p);
  const Vec3 gx = m.channel_gradient(m.index_of(channel_ids::x_adj), p);
  const CVec3 expected = e0 + 100.0 * gx.cast<Complex>();
  EXPECT_LT((e_pi - expected).norm(), 1e-9 * expected.norm());
}

TEST(Fields, SymmetryPlaneAboveInnerSite) {
  // At home drive the layout is mirror symmetric about x = y, so on that plane
  // the RF field has no component along (1, -1, 0).
  const ArrayLayout l = make_folsom();
  const FieldModel m(l);
  const DriveWeights w = m.weights(home_drive(l, 100.0, 10.1e6));
  const Vec2 c = l.site(inner_experiment_site).center;
  double peak = 0.0;
  std::vector<CVec3> fields;
  for (int i = 1; i <= 40; ++i) {
    const Vec3 p(c.x() + 1e-5 * (i % 5), c.y() + 1e-5 * (i % 5), 25e-6 * i);
    fields.push_back(m.rf_field(w, p));
    peak = std::max(peak, std::abs(fields.back().z()));
  }
  for (const auto& e : fields) EXPECT_LT(std::abs(e.x() - e.y()) / std::sqrt(2.0), 1e-6 * peak);
}

TEST(Fields, ImagePlaneVanishesAtThePlaneAndFadesWhenFar) {
  const Polygon pad = equal_area_ngon(25e-6, 64);
  const FieldModel with(single(pad, 1e-3)), far(single(pad, 1.0)), without(single(pad));
  EXPECT_NEAR(with.channel_potential(0, {3e-6, -2e-6, 1e-3}), 0.0, 1e-15);
  for (const Vec3& p : {Vec3(0, 0, 2e-5), Vec3(1e-5, 3e-5, 5e-5)}) {
    const double v0 = without.channel_potential(0, p);
    // Basis potentials are per volt of drive.
    EXPECT_LT(std::abs(far.channel_potential(0, p) - v0), 1e-9);
    EXPECT_LT((far.channel_gradient(0, p) - without.channel_gradient(0, p)).norm(),
              1e-9 * without.channel_gradient(0, p).norm());
    EXPECT_LT(with.channel_potential(0, p), v0);
  }
}

TEST(Fields, ImageCorrectionIsSmallFarBelowThePlane) {
  const ArrayLayout plain = make_folsom(), shielded = make_folsom(64, true);
  const FieldModel a(plain), b(shielded);
  const DriveWeights wa = a.weights(home_drive(plain, 100.0, 10.7e6));
  const DriveWeights wb = b.weights(home_drive(shielded, 100.0, 10.7e6));
  const Vec3 p(2.2e-3, 2.2e-3, 3e-4);
  const double ea = a.rf_field(wa, p).norm(), eb = b.rf_field(wb, p).norm();
  EXPECT_LT(std::abs(eb / ea - 1.0), 0.02);
}

TEST(Fields, GridCsvHasDocumentedColumns) {
  const ArrayLayout l = make_folsom();
  const FieldModel m(l);
  const std::vector<Vec3> points{Vec3(0.75e-3, 0.75e-3, 4e-4)};
  std::ostringstream os;
  write_grid_csv(os, m, m.weights(home_drive(l, 100.0, 10.1e6)), l.ion, points);
  const std::string text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "x,y,z,phi_dc,|e_rf|,pseudopotential_eV");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}
