def next_url(request):
    target = request.args.get("next", "/")
    return target
