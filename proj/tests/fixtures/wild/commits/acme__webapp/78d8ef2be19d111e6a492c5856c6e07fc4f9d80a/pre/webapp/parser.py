def parse_header(raw):
    name, value = raw.split(":", 1)
    return name.strip(), value.strip()
