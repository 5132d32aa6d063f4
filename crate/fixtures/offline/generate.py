"""Regenerates the offline fixture corpus (HTML dumps, screenshots, tasks.json).

Run from this directory: python3 generate.py
"""
import json
import os

from PIL import Image, ImageDraw

W, H = 1280, 720

# (kind, text, x, y, w, h, extra attributes)
PAGES = {
    "truck_home": [
        ("a", "Home", 20, 20, 60, 24, {}),
        ("a", "Rent a Truck", 100, 20, 120, 24, {"href": "form.html"}),
        ("a", "Storage", 240, 20, 80, 24, {}),
        ("a", "Careers", 340, 20, 80, 24, {}),
        ("div", "Moving made simple", 20, 120, 400, 40, {}),
        ("button", "Get a quote", 20, 200, 140, 36, {}),
        ("a", "Help", 20, 660, 60, 24, {}),
    ],
    "truck_form": [
        ("a", "Home", 20, 20, 60, 24, {}),
        ("div", "Pick up location", 20, 100, 200, 24, {}),
        ("input", "", 20, 130, 300, 32, {"type": "text", "name": "location", "placeholder": "City or ZIP"}),
        ("input", "", 340, 130, 160, 32, {"type": "date", "name": "date"}),
        ("select", "Small truck Medium truck Large truck", 520, 130, 180, 32, {"name": "size"}),
        ("button", "Find Your Truck", 720, 130, 160, 32, {}),
        ("a", "Help", 20, 660, 60, 24, {}),
    ],
    "flights": [
        ("a", "Flights", 20, 20, 80, 24, {}),
        ("a", "Hotels", 120, 20, 80, 24, {}),
        ("a", "Cars", 220, 20, 60, 24, {}),
        ("input", "", 20, 120, 240, 32, {"type": "text", "name": "from", "placeholder": "From"}),
        ("input", "", 280, 120, 240, 32, {"type": "text", "name": "to", "placeholder": "To"}),
        ("input", "", 540, 120, 160, 32, {"type": "date", "name": "depart"}),
        ("button", "Search flights", 720, 120, 160, 32, {}),
        ("a", "Deals", 20, 200, 80, 24, {}),
    ],
    "recipes_home": [
        ("a", "Breakfast", 20, 80, 120, 24, {}),
        ("a", "Dinner", 160, 80, 120, 24, {}),
        ("a", "Desserts", 300, 80, 120, 24, {}),
        ("a", "Drinks", 440, 80, 120, 24, {}),
        ("input", "", 900, 20, 240, 32, {"type": "search", "name": "q", "placeholder": "Search recipes"}),
        ("button", "Go", 1150, 20, 60, 32, {}),
    ],
    "recipes_desserts": [
        ("a", "Apple pie", 20, 120, 200, 24, {}),
        ("a", "Chocolate cake", 20, 160, 200, 24, {}),
        ("a", "Lemon tart", 20, 200, 200, 24, {}),
        ("a", "Back", 20, 20, 60, 24, {}),
    ],
    "shop_home": [
        ("input", "", 200, 20, 500, 32, {"type": "search", "name": "k", "placeholder": "Search products"}),
        ("button", "Search", 710, 20, 90, 32, {}),
        ("a", "Cart", 1180, 20, 60, 24, {}),
        ("a", "Today's deals", 20, 80, 140, 24, {}),
    ],
    "shop_results": [
        ("input", "", 200, 20, 500, 32, {"type": "search", "name": "k", "value": "usb cable"}),
        ("button", "Search", 710, 20, 90, 32, {}),
        ("select", "Featured Price: low to high Price: high to low", 1000, 80, 220, 28, {"name": "sort"}),
        ("div", "USB-C cable 1m", 20, 140, 300, 24, {}),
        ("button", "Add to cart", 340, 140, 120, 28, {}),
        ("div", "USB-C cable 2m", 20, 190, 300, 24, {}),
        ("button", "Add to cart", 340, 190, 120, 28, {}),
        ("div", "Lightning cable", 20, 240, 300, 24, {}),
        ("button", "Add to cart", 340, 240, 120, 28, {}),
    ],
    "jobs_home": [
        ("a", "About", 20, 20, 80, 24, {}),
        ("a", "Careers", 120, 20, 90, 24, {}),
        ("a", "Investors", 230, 20, 100, 24, {}),
        ("a", "Contact", 350, 20, 90, 24, {}),
    ],
    "jobs_search": [
        ("input", "", 20, 100, 320, 32, {"type": "text", "name": "keywords", "placeholder": "Keywords"}),
        ("select", "Any location Remote Berlin", 360, 100, 180, 32, {"name": "where"}),
        ("button", "Find jobs", 560, 100, 120, 32, {}),
        ("a", "Students", 20, 160, 100, 24, {}),
        ("a", "About", 20, 20, 80, 24, {}),
    ],
}

# task_id, split, website, domain, instruction, steps: (page, gold element index, op, value)
TASKS = [
    ("truck-1", "cross-task", "truckco", "Travel", "Rent a large truck for pick up in SJD",
     [("truck_home", 1, "CLICK", None), ("truck_form", 2, "TYPE", "SJD"), ("truck_form", 4, "SELECT", "Large truck")]),
    ("flight-1", "cross-task", "flyfast", "Travel", "Find flights from New York to Boston",
     [("flights", 3, "TYPE", "New York"), ("flights", 4, "TYPE", "Boston"), ("flights", 6, "CLICK", None)]),
    ("recipe-1", "cross-website", "cookbook", "Info", "Open the chocolate cake recipe in desserts",
     [("recipes_home", 2, "CLICK", None), ("recipes_desserts", 1, "CLICK", None)]),
    ("shop-1", "cross-website", "shopmart", "Shopping", "Add the cheapest 1m usb cable to the cart",
     [("shop_home", 0, "TYPE", "usb cable"), ("shop_home", 1, "CLICK", None),
      ("shop_results", 2, "SELECT", "Price: low to high"), ("shop_results", 4, "CLICK", None)]),
    ("jobs-1", "cross-domain", "megacorp", "Service", "Search for data engineer jobs",
     [("jobs_home", 1, "CLICK", None), ("jobs_search", 0, "TYPE", "data engineer"), ("jobs_search", 2, "CLICK", None)]),
]

INTERACTIVE = {"a", "button", "input", "select"}


def node_id(page, i):
    return str(1000 + sorted(PAGES).index(page) * 100 + i)


def render_html(page):
    rows = []
    for i, (kind, text, x, y, w, h, extra) in enumerate(PAGES[page]):
        attrs = dict(extra)
        attrs["backend_node_id"] = node_id(page, i)
        attrs["bounding_box_rect"] = f"{x},{y},{w},{h}"
        if kind == "a" and "href" not in attrs:
            attrs["href"] = "#" + text.lower().replace(" ", "-")
        attr_s = " ".join(f'{k}="{v}"' for k, v in attrs.items())
        if kind == "input":
            rows.append(f"<input {attr_s}>")
        elif kind == "select":
            opts = {"size": ["Small truck", "Medium truck", "Large truck"],
                    "sort": ["Featured", "Price: low to high", "Price: high to low"],
                    "where": ["Any location", "Remote", "Berlin"]}[attrs["name"]]
            rows.append(f"<select {attr_s}>" + "".join(f"<option>{o}</option>" for o in opts) + "</select>")
        else:
            rows.append(f"<{kind} {attr_s}>{text}</{kind}>")
    body = "\n".join(rows)
    return f'<html><head><title>{page}</title></head><body bounding_box_rect="0,0,{W},{H}">\n{body}\n</body></html>\n'


def render_png(page, path):
    img = Image.new("RGB", (W, H), (250, 250, 250))
    d = ImageDraw.Draw(img)
    for kind, text, x, y, w, h, extra in PAGES[page]:
        if kind in INTERACTIVE:
            d.rectangle([x, y, x + w - 1, y + h - 1], outline=(120, 120, 120), fill=(255, 255, 255))
        label = text.split("  ")[0] if kind != "select" else text.split(" ")[0]
        label = label or extra.get("value") or extra.get("placeholder", "")
        d.text((x + 4, y + 6), label, fill=(30, 30, 30) if kind != "a" else (20, 60, 200))
    img.save(path, optimize=False)


def main():
    os.makedirs("html", exist_ok=True)
    os.makedirs("screenshots", exist_ok=True)
    os.makedirs("rankings", exist_ok=True)
    tasks = []
    for task_id, split, site, domain, instruction, steps in TASKS:
        actions = []
        for n, (page, gold, op, value) in enumerate(steps):
            uid = f"{task_id}-{n}"
            with open(f"html/{uid}.html", "w") as f:
                f.write(render_html(page))
            render_png(page, f"screenshots/{uid}.png")
            action = {
                "action_uid": uid,
                "html_path": f"html/{uid}.html",
                "screenshot_path": f"screenshots/{uid}.png",
                "pos_candidate_ids": [node_id(page, gold)],
                "operation": {"op": op, "value": value or ""},
            }
            if task_id == "shop-1":
                # Precomputed ranking: gold first, then the rest in page order.
                ids = [node_id(page, gold)] + [node_id(page, i) for i, el in enumerate(PAGES[page])
                                               if i != gold and el[0] in INTERACTIVE]
                with open(f"rankings/{uid}.json", "w") as f:
                    json.dump(ids, f)
                action["candidate_ranking_path"] = f"rankings/{uid}.json"
            actions.append(action)
        tasks.append({"task_id": task_id, "website": site, "domain": domain, "split": split,
                      "confirmed_task": instruction, "actions": actions})
    with open("tasks.json", "w") as f:
        json.dump(tasks, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
