#include <gtest/gtest.h>

#include "ehv/identity.hpp"

using namespace ehv;

namespace {

const Digest kMr = sha256("enclave-build-1");

struct Fixture {
  AttestationAuthority authority{"authority"};
  EpochManager epoch{EpochConfig{authority.public_key(), kMr, 60'000, 200, {}}};
  CredentialIssuer issuer{"issuer"};
  WorkloadIdentity twin{"ehv.example", "/agent/twin-001", KeyPair::from_seed("twin-001").public_key()};

  Fixture() { issuer.register_workload(twin); }

  void attest_until(std::uint64_t epoch_number, std::int64_t now) {
    while (epoch.state().epoch_number < epoch_number)
      ASSERT_EQ(epoch.attest(authority.quote(kMr, sha256("root"), epoch.state().epoch_number), now), AttestError::none);
  }
};

}  // namespace

TEST(Identity, UriForm) {
  Fixture f;
  EXPECT_EQ(f.twin.uri(), "spiffe://ehv.example/agent/twin-001");
  EXPECT_THROW(f.issuer.register_workload(f.twin), std::invalid_argument);
}

TEST(Issue, BoundToCurrentEpoch) {
  Fixture f;
  f.attest_until(42, 1000);
  auto c = f.issuer.issue(f.twin.uri(), "dosage", f.epoch.state(), 1500);
  EXPECT_EQ(c.epoch_id(), "E-042");
  EXPECT_EQ(c.measurement, kMr);
  EXPECT_EQ(validate_credential(c, f.issuer.public_key(), "dosage", f.epoch.state(), 1500), CredentialStatus::valid);
}

TEST(Issue, RefusedWhileHalted) {
  Fixture f;
  try {
    f.issuer.issue(f.twin.uri(), "dosage", f.epoch.state(), 0);
    FAIL();
  } catch (const CredentialRefused& e) {
    EXPECT_EQ(e.reason(), CredentialRefused::Reason::epoch_halted);
  }
  f.attest_until(1, 0);
  EXPECT_THROW(f.issuer.issue(f.twin.uri(), "dosage", f.epoch.state(), 60'001), CredentialRefused);
}

TEST(Issue, UnknownSubjectRefused) {
  Fixture f;
  f.attest_until(1, 0);
  try {
    f.issuer.issue("spiffe://ehv.example/agent/ghost", "dosage", f.epoch.state(), 0);
    FAIL();
  } catch (const CredentialRefused& e) {
    EXPECT_EQ(e.reason(), CredentialRefused::Reason::unknown_subject);
  }
}

TEST(Issue, ExpiryAtEpochBoundary) {
  Fixture f;
  f.attest_until(1, 5000);
  auto c = f.issuer.issue(f.twin.uri(), "dosage", f.epoch.state(), 6000);
  const auto& s = f.epoch.state();
  EXPECT_EQ(c.expiry_ms, s.last_attest + s.ttl);
  for (std::int64_t t = c.expiry_ms - 2; t <= c.expiry_ms + 2; ++t) {
    auto status = validate_credential(c, f.issuer.public_key(), "dosage", s, t);
    EXPECT_EQ(status == CredentialStatus::valid, t < s.last_attest + s.ttl) << t;
  }
}

TEST(Validate, Reasons) {
  Fixture f;
  f.attest_until(1, 0);
  auto c = f.issuer.issue(f.twin.uri(), "dosage", f.epoch.state(), 10);
  const auto& pub = f.issuer.public_key();
  EXPECT_EQ(validate_credential(c, pub, "imaging", f.epoch.state(), 10), CredentialStatus::scope_mismatch);

  auto tampered = c;
  tampered.action_class = "imaging";
  EXPECT_EQ(validate_credential(tampered, pub, "imaging", f.epoch.state(), 10), CredentialStatus::bad_signature);
  EXPECT_EQ(validate_credential(c, KeyPair::from_seed("other").public_key(), "dosage", f.epoch.state(), 10),
            CredentialStatus::bad_signature);

  // Replay into the next epoch.
  f.attest_until(2, 20'000);
  EXPECT_EQ(validate_credential(c, pub, "dosage", f.epoch.state(), 20'001), CredentialStatus::epoch_mismatch);
}

TEST(Validate, MeasurementSwapInvalidates) {
  Fixture f;
  f.attest_until(1, 0);
  auto c = f.issuer.issue(f.twin.uri(), "dosage", f.epoch.state(), 10);
  EpochState swapped = f.epoch.state();
  swapped.measurement = sha256("enclave-build-2");
  EXPECT_EQ(validate_credential(c, f.issuer.public_key(), "dosage", swapped, 10),
            CredentialStatus::measurement_mismatch);
}

TEST(Validate, MonotoneInTime) {
  Fixture f;
  f.attest_until(1, 0);
  auto c = f.issuer.issue(f.twin.uri(), "dosage", f.epoch.state(), 0);
  bool seen_invalid = false;
  for (std::int64_t t = 0; t < 70'000; t += 250) {
    bool valid = validate_credential(c, f.issuer.public_key(), "dosage", f.epoch.state(), t) == CredentialStatus::valid;
    if (seen_invalid) {
      ASSERT_FALSE(valid) << t;
    }
    seen_invalid = seen_invalid || !valid;
  }
  EXPECT_TRUE(seen_invalid);
}
