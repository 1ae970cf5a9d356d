#include "ltx/serial.hpp"

#include <filesystem>
#include <system_error>

namespace ltx::serial {

void atomic_write_file(const std::string& path,
                       const std::function<void(std::ostream&)>& fill) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os)
      throw io_error(io_error::Kind::write_failure, "cannot open " + tmp);
    fill(os);
    os.flush();
    if (!os)
      throw io_error(io_error::Kind::write_failure, "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw io_error(io_error::Kind::write_failure,
                   "rename " + tmp + " -> " + path + ": " + ec.message());
}

std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error(io_error::Kind::not_found, "cannot open " + path);
  return is;
}

}  // namespace ltx::serial
