from urllib.parse import urlparse


def next_url(request):
    target = request.args.get("next", "/")
    if urlparse(target).netloc:
        target = "/"
    return target
