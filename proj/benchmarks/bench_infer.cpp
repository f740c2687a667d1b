// see bench_conv.cpp
