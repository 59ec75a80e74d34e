#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "core/archive.hpp"
#include "test_util.hpp"

using namespace m3pt;
using namespace m3pt::testutil;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("archive: save -> load round trip is bitwise on float32") {
  TrackerConfig c = toy_config();
  Foundation<float> f(c.foundation, 3);
  std::string path = temp_path("m3pt_test_foundation.m3pt");
  save_archive(archive_from_store(f.store()), path);
  WeightArchive a = load_archive(path);
  Foundation<float> g(c.foundation, 999);
  CHECK(param_checksum(f.store()) != param_checksum(g.store()));
  apply_archive(a, g.store());
  CHECK(param_checksum(f.store()) == param_checksum(g.store()));
  for (size_t i = 0; i < f.store().count(); ++i)
    for (int64_t k = 0; k < f.store().tensor(i).numel(); ++k)
      REQUIRE(f.store().tensor(i)[k] == g.store().tensor(i)[k]);
  std::filesystem::remove(path);
}

TEST_CASE("archive: double stores narrow to float32 and round trip bitwise") {
  TrackerConfig c = toy_config();
  Foundation<double> f(c.foundation, 5);
  std::stringstream buf;
  write_archive_stream(archive_from_store(f.store()), buf);
  WeightArchive a = read_archive_stream(buf);
  Foundation<double> g(c.foundation, 1);
  apply_archive(a, g.store());
  // after one narrowing pass the float32 images agree exactly
  CHECK(param_checksum(f.store()) == param_checksum(g.store()));
}

TEST_CASE("archive: missing tensor error names the tensor") {
  TrackerConfig c = toy_config();
  Foundation<float> f(c.foundation, 3);
  WeightArchive a = archive_from_store(f.store());
  // drop one encoder tensor
  std::string victim = "foundation/block2/qkv_w";
  a.entries.erase(std::remove_if(a.entries.begin(), a.entries.end(),
                                 [&](const WeightArchive::Entry& e) {
                                   return e.name == victim;
                                 }),
                  a.entries.end());
  try {
    apply_archive(a, f.store());
    FAIL("missing tensor accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Archive);
    CHECK(std::string(e.what()).find("missing tensor " + victim) != std::string::npos);
  }
}

TEST_CASE("archive: shape mismatch error names both shapes") {
  TrackerConfig c = toy_config();
  PrompterBank<float> bank(c, 3);
  WeightArchive a = archive_from_store(bank.store(), "prompter/");
  // a [7] tensor where [8] is expected
  for (auto& e : a.entries)
    if (e.name == "prompter/mfp/downv_b") e.shape = {7};
  try {
    apply_archive(a, bank.store(), "prompter/");
    FAIL("shape mismatch accepted");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("[7]") != std::string::npos);
    CHECK(msg.find("[16]") != std::string::npos);  // mfp low dim
  }
}

TEST_CASE("archive: truncated payload is a distinct load error") {
  TrackerConfig c = toy_config();
  PrompterBank<float> bank(c, 3);
  std::stringstream buf;
  write_archive_stream(archive_from_store(bank.store(), "prompter/"), buf);
  std::string bytes = buf.str();
  std::istringstream cut(bytes.substr(0, bytes.size() - 64));
  try {
    read_archive_stream(cut);
    FAIL("truncated archive accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Archive);
    CHECK(std::string(e.what()).find("truncated payload") != std::string::npos);
  }
}

TEST_CASE("archive: bad magic and malformed index lines are load errors") {
  std::istringstream junk("NOTANARCHIVE 12\nwhatever\n");
  CHECK_THROWS_AS(read_archive_stream(junk), Error);

  std::string idx = "a f32 1\n";  // missing dim + offset
  std::ostringstream os;
  os << "M3PTW1 " << idx.size() << "\n" << idx;
  std::istringstream malformed(os.str());
  CHECK_THROWS_AS(read_archive_stream(malformed), Error);
}

TEST_CASE("archive: duplicate names rejected") {
  std::string idx = "a f32 1 2 0\na f32 1 2 8\n";
  std::ostringstream os;
  os << "M3PTW1 " << idx.size() << "\n" << idx;
  std::string payload(16, '\0');
  os << payload;
  std::istringstream dup(os.str());
  try {
    read_archive_stream(dup);
    FAIL("duplicate tensor names accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
  }
}

TEST_CASE("archive: prompter-only checkpoints leave the foundation untouched") {
  TrackerConfig c = toy_config();
  Foundation<float> f(c.foundation, 3);
  PrompterBank<float> bank(c, 5);
  Rng rng(7);
  for (size_t i = 0; i < bank.store().count(); ++i) {
    auto& t = bank.store().tensor(i);
    for (int64_t k = 0; k < t.numel(); ++k)
      t[k] = static_cast<float>(rng.normal());
  }
  WeightArchive ckpt = archive_from_store(bank.store(), "prompter/");
  for (const auto& e : ckpt.entries) CHECK(e.name.rfind("prompter/", 0) == 0);

  uint64_t f_sum = param_checksum(f.store());
  PrompterBank<float> fresh(c, 99);
  apply_archive(ckpt, fresh.store(), "prompter/");
  CHECK(param_checksum(fresh.store()) == param_checksum(bank.store()));
  CHECK(param_checksum(f.store()) == f_sum);
}
