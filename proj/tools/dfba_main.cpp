// Command-line front end. Links only the public C API.
#include <cstdio>

#include "dfba.h"

int main() {
    std::printf("dfba %s\n", dfba_version());
    return 0;
}
