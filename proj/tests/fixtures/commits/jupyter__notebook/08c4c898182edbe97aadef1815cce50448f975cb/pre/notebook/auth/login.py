from urllib.parse import urlparse


class LoginHandler:
    def _redirect_safe(self, url, default=None):
        if default is None:
            default = self.base_url
        parsed = urlparse(url)
        if parsed.netloc or not (parsed.path + '/').startswith(self.base_url):
            url = default
        self.redirect(url)
