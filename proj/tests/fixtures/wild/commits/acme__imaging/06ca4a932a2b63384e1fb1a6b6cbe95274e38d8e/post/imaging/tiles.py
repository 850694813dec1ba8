LIMIT = 1 << 31


def tile_bytes(width, height, depth):
    size = width * height * depth
    if size <= 0 or size >= LIMIT:
        raise ValueError("tile too large")
    return bytearray(size)
